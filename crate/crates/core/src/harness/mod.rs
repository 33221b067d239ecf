//! Experiment orchestration behind the `qinit` binary: scenario presets,
//! calibration, training runs, validation, sweeps and artifact output.

mod eval;
mod spec;

pub use eval::{
    calibrate, fitted_ground_population, run_validation, summarize, Calibration, EpisodeOutcome, EpisodePolicy,
    EvalMetrics, OraclePolicy, Probe, RawEval, CHUNK_EPISODES,
};
pub use spec::{DiscriminationSpec, ExperimentSection, ExperimentSpec, Scenario};

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{
    build_policy_map, overlays_1d, overlays_2d, thresholds_from_fit, Axis, PolicyMap, QutritRegions, ThresholdAgent,
};
use crate::discriminator::{discrimination_curve, simulate_labeled_set, DiscriminationCurve, LabeledTraceSet};
use crate::envsim::{Action, Environment, InitialStatePrep};
use crate::error::{Error, Result};
use crate::nn::{latency_report, LatencyLedger, LoopConstants, PolicyCheckpoint, PolicyNet};
use crate::ppo::{train, Agent, RewardConfig, TrainConfig};

/// Independent seed for a named purpose (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_CALIBRATION: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_CURVE: u64 = 3;
const TAG_VALIDATION: u64 = 4;
const TAG_BOOTSTRAP: u64 = 5;
const TAG_THRESHOLD: u64 = 6;
const TAG_DISCRIMINATION: u64 = 7;

/// Where and how a command writes and runs.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: usize,
}

impl RunOptions {
    fn dir(&self, sub: &str) -> Result<Option<PathBuf>> {
        match &self.out {
            Some(root) => {
                let d = if sub.is_empty() { root.clone() } else { root.join(sub) };
                std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                Ok(Some(d))
            }
            None => Ok(None),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn environment(spec: &ExperimentSpec) -> Result<Environment> {
    Environment::new(spec.env.clone())
}

pub fn calibration_for(spec: &ExperimentSpec, env: &Environment, seed: u64) -> Result<Calibration> {
    calibrate(env, spec.experiment.calibration_shots, derive_seed(seed, TAG_CALIBRATION))
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub episodes_seen: usize,
    pub infidelity: f64,
    pub mean_cycles: f64,
    pub reward_mean: f64,
    pub entropy: f64,
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::parse(path, e))).collect()
}

/// Metrics of a finished run. Contains no timestamps, so identical inputs
/// give byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: Scenario,
    pub spec_hash: String,
    pub seed: u64,
    pub lambda: f64,
    pub episodes_seen: usize,
    /// Mean episode reward of the last training batch.
    pub reward_mean: f64,
    pub validation: Vec<EvalMetrics>,
}

/// Bookkeeping for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub learning_curve: Option<String>,
    pub checkpoints: Vec<String>,
    pub metrics: RunMetrics,
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub policy: PolicyNet,
    pub calibration: Calibration,
    pub curve: Vec<CurveRow>,
}

/// Evaluate `policy` on every evaluation preparation.
#[allow(clippy::too_many_arguments)]
pub fn validate_policy<P: EpisodePolicy + ?Sized>(
    spec: &ExperimentSpec,
    env: &Environment,
    cal: &Calibration,
    policy: &P,
    episodes: usize,
    resamples: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<EvalMetrics>> {
    let x = &spec.experiment;
    x.eval_preps
        .iter()
        .enumerate()
        .map(|(k, &prep)| {
            let s = derive_seed(seed, k as u64 + 100);
            let raw = run_validation(env, policy, cal, prep, x.strength, x.selection, episodes, s, threads, 0)?;
            summarize(cal, prep, &raw, resamples, derive_seed(s, TAG_BOOTSTRAP))
        })
        .collect()
}

/// Train one agent with penalty `lambda` and validate it.
pub fn cmd_train(spec: &ExperimentSpec, seed: u64, lambda: f64, opts: &RunOptions) -> Result<TrainOutcome> {
    spec.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::config("experiment.lambdas", format!("must be >= 0, got {lambda}")));
    }
    let started_unix = unix_now();
    let x = &spec.experiment;
    let env = environment(spec)?;
    let cal = calibration_for(spec, &env, seed)?;
    let dir = opts.dir("")?;
    let ckpt_dir = opts.dir("checkpoints")?;
    if let Some(d) = &dir {
        write_json(&d.join("calibration.json"), &cal)?;
        std::fs::write(d.join("spec.toml"), spec.to_toml()?).map_err(|e| Error::io(d, e))?;
    }
    let cfg = TrainConfig {
        hp: spec.ppo.clone(),
        reward: RewardConfig { lambda_penalty: lambda, u_g: cal.u_g(), u_e: cal.u_e() },
        preps: x.train_preps.clone(),
        strength: x.strength,
        max_cycles: spec.env.max_cycles,
        output_gain: x.output_gain,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_TRAIN));
    let mut agent = Agent::new(spec.topology.clone(), &spec.ppo, x.output_gain, &mut rng)?;
    let mut curve = Vec::new();
    let mut checkpoints = Vec::new();
    let mut last_reward = 0.0;
    let mut episodes_seen = 0;
    let curve_prep = x.eval_preps[0];
    train(&env, &mut agent, &cfg, &cal.u_weights, &mut rng, |report, agent| {
        last_reward = report.batch.reward_mean;
        episodes_seen = report.episodes_seen;
        if report.step % x.curve_every == 0 || report.step == spec.ppo.training_steps {
            let s = derive_seed(derive_seed(seed, TAG_CURVE), report.step as u64);
            let raw =
                run_validation(&env, &agent.policy, &cal, curve_prep, x.strength, x.selection, x.curve_episodes, s, opts.threads, 0)?;
            let m = summarize(&cal, curve_prep, &raw, 0, 0)?;
            curve.push(CurveRow {
                step: report.step,
                episodes_seen: report.episodes_seen,
                infidelity: m.infidelity,
                mean_cycles: m.mean_cycles,
                reward_mean: report.batch.reward_mean,
                entropy: report.update.entropy,
            });
        }
        if let Some(d) = &ckpt_dir {
            if report.step % x.checkpoint_every == 0 {
                let p = d.join(format!("step_{:05}.json", report.step));
                PolicyCheckpoint::from_net(&agent.policy).save(&p)?;
                checkpoints.push(p.display().to_string());
            }
        }
        Ok(true)
    })?;
    let validation = validate_policy(
        spec,
        &env,
        &cal,
        &agent.policy,
        x.validation_episodes,
        x.bootstrap_resamples,
        derive_seed(seed, TAG_VALIDATION),
        opts.threads,
    )?;
    let metrics = RunMetrics {
        scenario: x.scenario,
        spec_hash: spec.hash(),
        seed,
        lambda,
        episodes_seen,
        reward_mean: last_reward,
        validation,
    };
    let mut learning_curve = None;
    if let Some(d) = &dir {
        let p = d.join("policy.json");
        PolicyCheckpoint::from_net(&agent.policy).save(&p)?;
        checkpoints.push(p.display().to_string());
        let c = d.join("learning_curve.csv");
        write_csv_rows(&c, &curve)?;
        learning_curve = Some(c.display().to_string());
        write_json(&d.join("metrics.json"), &metrics)?;
    }
    let record = RunRecord {
        spec_hash: spec.hash(),
        seed,
        started_unix,
        finished_unix: unix_now(),
        learning_curve,
        checkpoints,
        metrics,
    };
    if let Some(d) = &dir {
        write_json(&d.join("run.json"), &record)?;
    }
    Ok(TrainOutcome { record, policy: agent.policy, calibration: cal, curve })
}

/// One point of the threshold-baseline sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub fraction: f64,
    pub accept_threshold: f64,
    pub discriminate_threshold: f64,
    pub mean_cycles: f64,
    pub mean_cycles_se: f64,
    pub infidelity: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Threshold agent for acceptance fraction `f` under the experiment's readout strength.
pub fn threshold_agent(spec: &ExperimentSpec, cal: &Calibration, fraction: f64) -> Result<ThresholdAgent> {
    let mut policy = thresholds_from_fit(cal.shape(spec.experiment.strength), fraction)?;
    if let Some(plane) = &cal.plane {
        let f_action = if spec.topology.n_actions == 4 { Action::GfFlip } else { Action::Idle };
        policy.qutrit = Some(QutritRegions { fit: plane.clone(), f_action });
    }
    Ok(ThresholdAgent { policy, u_weights: cal.u_weights.clone(), w_weights: cal.w_weights.clone() })
}

/// Sweep the acceptance threshold on the first evaluation preparation.
pub fn threshold_frontier(
    spec: &ExperimentSpec,
    env: &Environment,
    cal: &Calibration,
    episodes: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<ThresholdPoint>> {
    let x = &spec.experiment;
    let prep = x.eval_preps[0];
    x.threshold_fractions
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let agent = threshold_agent(spec, cal, f)?;
            let s = derive_seed(derive_seed(seed, TAG_THRESHOLD), k as u64);
            let raw = run_validation(env, &agent, cal, prep, x.strength, x.selection, episodes, s, threads, 0)?;
            let m = summarize(cal, prep, &raw, x.bootstrap_resamples.min(50), derive_seed(s, TAG_BOOTSTRAP))?;
            Ok(ThresholdPoint {
                fraction: f,
                accept_threshold: agent.policy.accept_threshold,
                discriminate_threshold: agent.policy.discriminate_threshold,
                mean_cycles: m.mean_cycles,
                mean_cycles_se: m.mean_cycles_se,
                infidelity: m.infidelity,
                ci_lo: m.infidelity_ci[0],
                ci_hi: m.infidelity_ci[1],
            })
        })
        .collect()
}

/// One λ point of the agent frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub lambda: f64,
    pub mean_cycles: f64,
    pub mean_cycles_se: f64,
    pub infidelity: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub struct SweepOutcome {
    pub agents: Vec<FrontierRow>,
    pub thresholds: Vec<ThresholdPoint>,
}

/// Train and validate one agent per λ, plus the threshold sweep.
pub fn cmd_sweep_lambda(spec: &ExperimentSpec, seed: u64, opts: &RunOptions) -> Result<SweepOutcome> {
    spec.validate()?;
    let mut agents = Vec::new();
    for (k, &lambda) in spec.experiment.lambdas.iter().enumerate() {
        let sub = RunOptions { out: opts.out.as_ref().map(|o| o.join(format!("lambda_{k:02}"))), threads: opts.threads };
        let run = cmd_train(spec, seed, lambda, &sub)?;
        let m = &run.record.metrics.validation[0];
        agents.push(FrontierRow {
            lambda,
            mean_cycles: m.mean_cycles,
            mean_cycles_se: m.mean_cycles_se,
            infidelity: m.infidelity,
            ci_lo: m.infidelity_ci[0],
            ci_hi: m.infidelity_ci[1],
        });
    }
    let env = environment(spec)?;
    let cal = calibration_for(spec, &env, seed)?;
    let thresholds = threshold_frontier(spec, &env, &cal, spec.experiment.threshold_episodes, seed, opts.threads)?;
    if let Some(d) = opts.dir("")? {
        write_csv_rows(&d.join("frontier.csv"), &agents)?;
        write_csv_rows(&d.join("threshold_frontier.csv"), &thresholds)?;
    }
    Ok(SweepOutcome { agents, thresholds })
}

/// Policy maps of a validated policy: P(a) over U, over (U_t, U_{t−1}) with
/// memory, and over (U, W) for three-level readout.
pub fn policy_maps(spec: &ExperimentSpec, cal: &Calibration, probes: &[Probe]) -> Result<Vec<(String, PolicyMap)>> {
    let shape = cal.shape(spec.experiment.strength);
    let axis = Axis::around_fit(shape);
    let mut maps = Vec::new();
    let one: Vec<_> = probes.iter().map(|p| p.sample_u()).collect();
    maps.push(("u".to_string(), build_policy_map(&one, &[axis], overlays_1d(shape))?));
    if spec.topology.memory_depth > 0 {
        let two: Vec<_> = probes.iter().filter_map(|p| p.sample_u_prev()).collect();
        if !two.is_empty() {
            maps.push(("u_uprev".into(), build_policy_map(&two, &[axis, axis], overlays_1d(shape))?));
        }
    }
    if let Some(plane) = &cal.plane {
        let uw: Vec<_> = probes.iter().filter_map(|p| p.sample_uw()).collect();
        if !uw.is_empty() {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for c in &plane.components {
                for d in 0..2 {
                    let s = c.cov[d][d].sqrt();
                    lo[d] = lo[d].min(c.mean[d] - 4.0 * s);
                    hi[d] = hi[d].max(c.mean[d] + 4.0 * s);
                }
            }
            let axes = [Axis { lo: lo[0], hi: hi[0], bins: 41 }, Axis { lo: lo[1], hi: hi[1], bins: 41 }];
            maps.push(("u_w".into(), build_policy_map(&uw, &axes, overlays_2d(plane))?));
        }
    }
    Ok(maps)
}

/// Grid CSV: one row per cell with axis centres, count and probabilities
/// (blank for empty cells).
pub fn write_policy_map_csv(path: &Path, map: &PolicyMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    let mut header: Vec<String> = (0..map.axes.len()).map(|d| format!("x{d}")).collect();
    header.push("count".into());
    header.extend((0..map.n_actions).map(|a| format!("p{a}")));
    w.write_record(&header).map_err(|e| Error::parse(path, e))?;
    let centers: Vec<Vec<f64>> = map.axes.iter().map(|a| a.centers()).collect();
    for (flat, count) in map.counts.iter().enumerate() {
        let mut idx = vec![0; map.axes.len()];
        let mut rest = flat;
        for d in (0..map.axes.len()).rev() {
            idx[d] = rest % map.axes[d].bins;
            rest /= map.axes[d].bins;
        }
        let mut row: Vec<String> = idx.iter().enumerate().map(|(d, &i)| centers[d][i].to_string()).collect();
        row.push(count.to_string());
        match &map.probs[flat] {
            Some(p) => row.extend(p.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), map.n_actions)),
        }
        w.write_record(&row).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec_hash: String,
    pub seed: u64,
    pub selection: crate::ppo::ActionSelection,
    pub validation: Vec<EvalMetrics>,
}

/// Validate a saved policy and emit metrics plus policy maps.
pub fn cmd_eval(spec: &ExperimentSpec, checkpoint: &Path, episodes: usize, seed: u64, opts: &RunOptions) -> Result<EvalReport> {
    spec.validate()?;
    if episodes == 0 {
        return Err(Error::config("eval.episodes", "must be >= 1"));
    }
    let net = PolicyCheckpoint::load(checkpoint)?.to_net(Some(&spec.topology))?;
    let env = environment(spec)?;
    let cal = calibration_for(spec, &env, seed)?;
    let x = &spec.experiment;
    let mut validation = Vec::new();
    let dir = opts.dir("")?;
    for (k, &prep) in x.eval_preps.iter().enumerate() {
        let s = derive_seed(derive_seed(seed, TAG_VALIDATION), k as u64 + 100);
        let raw = run_validation(&env, &net, &cal, prep, x.strength, x.selection, episodes, s, opts.threads, 200_000)?;
        validation.push(summarize(&cal, prep, &raw, x.bootstrap_resamples, derive_seed(s, TAG_BOOTSTRAP))?);
        if let Some(d) = &dir {
            for (name, map) in policy_maps(spec, &cal, &raw.probes)? {
                let stem = format!("policy_map_{}_{name}", prep_name(prep));
                write_policy_map_csv(&d.join(format!("{stem}.csv")), &map)?;
                write_json(&d.join(format!("{stem}.json")), &map)?;
            }
        }
    }
    let report = EvalReport { spec_hash: spec.hash(), seed, selection: x.selection, validation };
    if let Some(d) = &dir {
        write_json(&d.join("eval.json"), &report)?;
    }
    Ok(report)
}

fn prep_name(p: InitialStatePrep) -> &'static str {
    match p {
        InitialStatePrep::Equilibrium => "equilibrium",
        InitialStatePrep::Inverted => "inverted",
        InitialStatePrep::Mixed => "mixed",
        InitialStatePrep::QutritMixed => "qutrit_mixed",
    }
}

pub fn cmd_latency(spec: &ExperimentSpec, opts: &RunOptions) -> Result<LatencyLedger> {
    spec.topology.validate("topology.")?;
    let ledger = latency_report(&spec.topology, &LoopConstants::default());
    if let Some(d) = opts.dir("")? {
        write_json(&d.join("latency.json"), &ledger)?;
    }
    Ok(ledger)
}

/// Simulate (or load) a labelled set and compute the discrimination curve.
pub fn cmd_discriminate(
    spec: &ExperimentSpec,
    traces: Option<&Path>,
    seed: u64,
    opts: &RunOptions,
) -> Result<DiscriminationCurve> {
    let d = &spec.discrimination;
    d.classifier.validate()?;
    let set = match traces {
        Some(p) => LabeledTraceSet::read_csv(p, spec.env.sample_rate, 2)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_DISCRIMINATION));
            simulate_labeled_set(&spec.env, d.n_traces, d.trace_len, d.heralded, &mut rng)?
        }
    };
    let grid: Vec<usize> = d.tau_samples.iter().copied().filter(|&t| t <= set.trace_len()).collect();
    let curve = discrimination_curve(&set, &grid, &d.classifier, derive_seed(seed, TAG_DISCRIMINATION + 1))?;
    if let Some(dir) = opts.dir("")? {
        curve.write_csv(&dir.join("discrimination.csv"))?;
        write_json(&dir.join("discrimination.json"), &curve)?;
    }
    Ok(curve)
}

/// Write a labelled trace set and the mean traces it was drawn from.
pub fn cmd_simulate_traces(spec: &ExperimentSpec, n: usize, len: usize, seed: u64, opts: &RunOptions) -> Result<LabeledTraceSet> {
    if n < 8 {
        return Err(Error::config("simulate.n", "must be >= 8"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_DISCRIMINATION));
    let set = simulate_labeled_set(&spec.env, n, len, spec.discrimination.heralded, &mut rng)?;
    if let Some(d) = opts.dir("")? {
        set.write_csv(&d.join("traces.csv"))?;
        environment(spec)?.mean_traces().write_csv(&d.join("mean_traces.csv"), spec.env.sample_rate)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..8).map(|t| derive_seed(1, t)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
    }
}
