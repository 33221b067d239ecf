use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminator::ClassifierConfig;
use crate::envsim::{EnvConfig, InitialStatePrep, Strength};
use crate::error::{Error, Result};
use crate::nn::NetTopology;
use crate::ppo::{ActionSelection, PpoHyperparams};

/// Named experiment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    StrongQubit,
    WeakQubitL0,
    WeakQubitL2,
    #[serde(rename = "qutrit-4action")]
    #[value(name = "qutrit-4action")]
    Qutrit4action,
    #[serde(rename = "qutrit-3action")]
    #[value(name = "qutrit-3action")]
    Qutrit3action,
    Discrimination,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::StrongQubit => "strong-qubit",
            Scenario::WeakQubitL0 => "weak-qubit-l0",
            Scenario::WeakQubitL2 => "weak-qubit-l2",
            Scenario::Qutrit4action => "qutrit-4action",
            Scenario::Qutrit3action => "qutrit-3action",
            Scenario::Discrimination => "discrimination",
        }
    }
}

/// Settings of the supervised discrimination study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminationSpec {
    pub n_traces: usize,
    /// Samples per simulated trace.
    pub trace_len: usize,
    /// Observation times in samples; multiples of 32.
    pub tau_samples: Vec<usize>,
    pub heralded: bool,
    pub classifier: ClassifierConfig,
}

impl Default for DiscriminationSpec {
    fn default() -> Self {
        DiscriminationSpec {
            n_traces: 32768,
            trace_len: 2048,
            tau_samples: vec![64, 128, 192, 256, 320, 512, 768, 1024, 1536, 2048],
            heralded: true,
            classifier: ClassifierConfig::default(),
        }
    }
}

/// Full description of an experiment. Loaded from TOML as overrides on top
/// of the scenario defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    pub env: EnvConfig,
    pub topology: NetTopology,
    pub ppo: PpoHyperparams,
    pub discrimination: DiscriminationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub scenario: Scenario,
    pub strength: Strength,
    /// Cycle penalties; `train` uses the first, `sweep-lambda` all of them.
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub train_preps: Vec<InitialStatePrep>,
    pub eval_preps: Vec<InitialStatePrep>,
    pub validation_episodes: usize,
    pub selection: ActionSelection,
    pub output_gain: f64,
    /// Learning-curve evaluation interval (training steps) and size.
    pub curve_every: usize,
    pub curve_episodes: usize,
    pub checkpoint_every: usize,
    /// Shots per prepared level for the readout calibration.
    pub calibration_shots: usize,
    pub bootstrap_resamples: usize,
    /// Threshold-baseline sweep: acceptance threshold as a fraction of the
    /// g→e distance measured from the fitted g mean.
    pub threshold_fractions: Vec<f64>,
    pub threshold_episodes: usize,
}

impl ExperimentSpec {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let strong = ExperimentSection {
            scenario,
            strength: Strength::Strong,
            lambdas: vec![0.02],
            seeds: vec![1, 2, 3],
            train_preps: vec![InitialStatePrep::Equilibrium, InitialStatePrep::Inverted],
            eval_preps: vec![InitialStatePrep::Equilibrium, InitialStatePrep::Inverted],
            validation_episodes: 20_000,
            selection: ActionSelection::Stochastic,
            output_gain: 0.01,
            curve_every: 5,
            curve_episodes: 2_000,
            checkpoint_every: 20,
            calibration_shots: 20_000,
            bootstrap_resamples: 200,
            threshold_fractions: (0..=12).map(|k| -0.7 + 0.1 * k as f64).collect(),
            threshold_episodes: 20_000,
        };
        let mut ppo = PpoHyperparams {
            training_steps: 60,
            ..Default::default()
        };
        let (experiment, env, topology) = match scenario {
            Scenario::StrongQubit | Scenario::Discrimination => (strong, EnvConfig::default(), NetTopology::default()),
            Scenario::WeakQubitL0 | Scenario::WeakQubitL2 => {
                ppo.training_steps = 600;
                let memory = if scenario == Scenario::WeakQubitL2 { 2 } else { 0 };
                (
                    ExperimentSection {
                        strength: Strength::Weak,
                        lambdas: vec![0.006, 0.03],
                        train_preps: vec![InitialStatePrep::Mixed],
                        eval_preps: vec![InitialStatePrep::Mixed],
                        ..strong
                    },
                    EnvConfig::default(),
                    NetTopology::with_memory(memory, 3),
                )
            }
            Scenario::Qutrit4action | Scenario::Qutrit3action => {
                ppo.training_steps = 600;
                let (n_actions, lambdas) = if scenario == Scenario::Qutrit4action {
                    (4, vec![0.005])
                } else {
                    (3, vec![0.002, 0.0005])
                };
                // without GfFlip an f population can only decay, which takes
                // far more than the default cap of cycles
                let env = EnvConfig { max_cycles: 40, ..EnvConfig::qutrit() };
                (
                    ExperimentSection {
                        lambdas,
                        train_preps: vec![InitialStatePrep::QutritMixed],
                        eval_preps: vec![InitialStatePrep::QutritMixed],
                        ..strong
                    },
                    env,
                    NetTopology::with_memory(0, n_actions),
                )
            }
        };
        ExperimentSpec {
            experiment,
            env,
            topology,
            ppo,
            discrimination: DiscriminationSpec::default(),
        }
    }

    /// Parse TOML overrides; `experiment.scenario` picks the base preset.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| Error::parse(origin, e))?;
        let scenario = match user.get("experiment").and_then(|e| e.get("scenario")) {
            Some(v) => v
                .clone()
                .try_into::<Scenario>()
                .map_err(|e| Error::config("experiment.scenario", e.to_string()))?,
            None => Scenario::StrongQubit,
        };
        let base = Self::for_scenario(scenario);
        let mut merged = toml::Value::try_from(&base).map_err(|e| Error::parse(origin, e))?;
        merge(&mut merged, user);
        let mut spec: ExperimentSpec = merged.try_into().map_err(|e| Error::parse(origin, e))?;
        spec.env.rebase_paths(origin.parent().unwrap_or(Path::new(".")));
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::parse("<spec>", e))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let x = &self.experiment;
        self.env.validate("env.")?;
        self.topology.validate("topology.")?;
        self.ppo.validate("ppo.")?;
        let levels = self.env.levels;
        let n_actions = self.topology.n_actions;
        let need = |cond: bool, path: &str, msg: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::config(path, format!("{msg} for scenario {}", x.scenario.name())))
            }
        };
        match x.scenario {
            Scenario::Qutrit4action => {
                need(levels == 3, "env.levels", "must be 3")?;
                need(n_actions == 4, "topology.n_actions", "must be 4")?;
            }
            Scenario::Qutrit3action => {
                need(levels == 3, "env.levels", "must be 3")?;
                need(n_actions == 3, "topology.n_actions", "must be 3")?;
            }
            Scenario::WeakQubitL0 | Scenario::WeakQubitL2 => {
                need(levels == 2, "env.levels", "must be 2")?;
                need(n_actions == 3, "topology.n_actions", "must be 3")?;
                need(x.strength == Strength::Weak, "experiment.strength", "must be weak")?;
                let l = if x.scenario == Scenario::WeakQubitL2 { 2 } else { 0 };
                need(self.topology.memory_depth == l, "topology.memory_depth", &format!("must be {l}"))?;
            }
            Scenario::StrongQubit | Scenario::Discrimination => {
                need(levels == 2, "env.levels", "must be 2")?;
                need(n_actions == 3, "topology.n_actions", "must be 3")?;
            }
        }
        if self.topology.readout_len != self.env.readout_len {
            return Err(Error::config("topology.readout_len", "must equal env.readout_len"));
        }
        if x.lambdas.is_empty() {
            return Err(Error::config("experiment.lambdas", "must not be empty"));
        }
        for (k, l) in x.lambdas.iter().enumerate() {
            if !(*l >= 0.0) || !l.is_finite() {
                return Err(Error::config(format!("experiment.lambdas[{k}]"), format!("must be >= 0, got {l}")));
            }
        }
        if x.seeds.is_empty() {
            return Err(Error::config("experiment.seeds", "must not be empty"));
        }
        if x.train_preps.is_empty() || x.eval_preps.is_empty() {
            return Err(Error::config("experiment.train_preps", "preparation lists must not be empty"));
        }
        for p in x.train_preps.iter().chain(&x.eval_preps) {
            if *p == InitialStatePrep::QutritMixed && levels != 3 {
                return Err(Error::config("experiment.train_preps", "qutrit-mixed needs env.levels = 3"));
            }
        }
        let positive = [
            (x.validation_episodes, "validation_episodes"),
            (x.curve_every, "curve_every"),
            (x.curve_episodes, "curve_episodes"),
            (x.checkpoint_every, "checkpoint_every"),
            (x.calibration_shots, "calibration_shots"),
            (x.threshold_episodes, "threshold_episodes"),
        ];
        for (v, f) in positive {
            if v == 0 {
                return Err(Error::config(format!("experiment.{f}"), "must be >= 1"));
            }
        }
        if x.calibration_shots < 100 {
            return Err(Error::config("experiment.calibration_shots", "must be >= 100"));
        }
        if !(x.output_gain > 0.0) {
            return Err(Error::config("experiment.output_gain", "must be > 0"));
        }
        if x.threshold_fractions.is_empty() {
            return Err(Error::config("experiment.threshold_fractions", "must not be empty"));
        }
        let d = &self.discrimination;
        if x.scenario == Scenario::Discrimination {
            d.classifier.validate()?;
            if d.n_traces < 8 {
                return Err(Error::config("discrimination.n_traces", "must be >= 8"));
            }
            if d.tau_samples.is_empty() || d.tau_samples.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("discrimination.tau_samples", "must be non-empty and ascending"));
            }
            if let Some(&t) = d.tau_samples.iter().find(|&&t| t > d.trace_len || t % 32 != 0) {
                return Err(Error::config(
                    "discrimination.tau_samples",
                    format!("{t} is not a multiple of 32 within trace_len"),
                ));
            }
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for s in [
            Scenario::StrongQubit,
            Scenario::WeakQubitL0,
            Scenario::WeakQubitL2,
            Scenario::Qutrit4action,
            Scenario::Qutrit3action,
            Scenario::Discrimination,
        ] {
            ExperimentSpec::for_scenario(s).validate().unwrap();
        }
    }

    #[test]
    fn overrides_and_field_paths() {
        let p = Path::new("x.toml");
        let s = ExperimentSpec::from_toml_str("[experiment]\nscenario = \"qutrit-4action\"\n[ppo]\ngamma = 0.9\n", p).unwrap();
        assert_eq!(s.env.levels, 3);
        assert_eq!(s.ppo.gamma, 0.9);
        let err = ExperimentSpec::from_toml_str("[experiment]\nlambdas = [-0.1]\n", p).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "experiment.lambdas[0]"), "{err}");
        let err = ExperimentSpec::from_toml_str("[topology]\nn_actions = 4\n", p).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "topology.n_actions"), "{err}");
        assert!(ExperimentSpec::from_toml_str("[env]\nbogus = 1\n", p).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentSpec::for_scenario(Scenario::StrongQubit);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.ppo.gamma = 0.9;
        assert_ne!(a.hash(), b.hash());
        let back = ExperimentSpec::from_toml_str(&a.to_toml().unwrap(), Path::new("x.toml")).unwrap();
        assert_eq!(back.hash(), a.hash());
    }
}
