//! Stochastic transmon environment under repeated dispersive readout.
//!
//! The hidden state is a single level (g, e or f). Between and during readouts
//! it follows a continuous-time Markov jump process: e→g at 1/T1(e), f→e at
//! 1/T1(f) and g→e at P_therm/T1(e). A readout emits the time-concatenation of
//! the per-level mean traces along the sampled jump path plus white Gaussian
//! noise on both quadratures.

mod config;
mod episode;

pub use config::{EnvConfig, IqTrace, MeanTraceSpec, MeanTraces, DEFAULT_RETHERM_FLOOR};
pub use episode::{Episode, EpisodeView, Step};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transmon level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    G,
    E,
    F,
}

impl Level {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        [Level::G, Level::E, Level::F].get(i).copied()
    }
}

/// Agent action. The discriminant is the policy output index: the ordering
/// Terminate < Idle < Flip follows increasing excited-state evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Terminate = 0,
    Idle = 1,
    Flip = 2,
    GfFlip = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Terminate, Action::Idle, Action::Flip, Action::GfFlip];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

/// Readout power setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Strong,
    Weak,
}

/// Initial-state preparation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialStatePrep {
    /// Thermal equilibrium: e with probability P_therm.
    Equilibrium,
    /// Equilibrium followed by a perfect g↔e swap.
    Inverted,
    /// Completely mixed qubit: g or e with probability 1/2.
    Mixed,
    /// Completely mixed qutrit: g, e, f with probability 1/3 each.
    QutritMixed,
}

/// Hidden environment state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub level: Level,
}

impl EnvState {
    pub fn new(level: Level) -> Self {
        EnvState { level }
    }
}

/// One digitized readout record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub i_samples: Vec<f64>,
    pub q_samples: Vec<f64>,
    /// Hidden jump path `(time, level)` during acquisition. Only for oracles
    /// and diagnostics; policies must not read it.
    pub latent_path: Vec<(f64, Level)>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.i_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_samples.is_empty()
    }

    pub fn initial_level(&self) -> Level {
        self.latent_path[0].1
    }

    pub fn final_level(&self) -> Level {
        self.latent_path[self.latent_path.len() - 1].1
    }

    /// Whether any jump happened strictly before time `t`.
    pub fn jumped_before(&self, t: f64) -> bool {
        self.latent_path.iter().skip(1).any(|(tj, _)| *tj < t)
    }
}

/// A validated environment instance. Cheap to share; all randomness comes
/// from the caller's rng.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: EnvConfig,
    means: MeanTraces,
    contrast: f64,
}

impl Environment {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate("env.")?;
        let means = cfg.resolve_mean_traces("env.")?;
        let contrast = means
            .g
            .i
            .iter()
            .zip(&means.e.i)
            .chain(means.g.q.iter().zip(&means.e.q))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if contrast == 0.0 {
            return Err(Error::config("env.mean_traces", "g and e mean traces are identical"));
        }
        Ok(Environment {
            cfg,
            means,
            contrast,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn mean_traces(&self) -> &MeanTraces {
        &self.means
    }

    pub fn mean_trace(&self, level: Level) -> &IqTrace {
        match level {
            Level::G => &self.means.g,
            Level::E => &self.means.e,
            Level::F => self.means.f.as_ref().expect("f level only reachable with levels = 3"),
        }
    }

    /// Per-sample noise σ giving matched-filter SNR `snr` on jump-free traces:
    /// with w ∝ Δs, |μ_g − μ_e| / σ_U = |Δs| / σ.
    pub fn noise_sigma(&self, strength: Strength) -> f64 {
        let snr = match strength {
            Strength::Strong => self.cfg.snr,
            Strength::Weak => self.cfg.weak_snr,
        };
        self.contrast / snr
    }

    pub fn prepare<R: Rng + ?Sized>(&self, prep: InitialStatePrep, rng: &mut R) -> Result<EnvState> {
        let level = match prep {
            InitialStatePrep::Equilibrium => {
                if rng.random::<f64>() < self.cfg.p_therm {
                    Level::E
                } else {
                    Level::G
                }
            }
            InitialStatePrep::Inverted => {
                if rng.random::<f64>() < self.cfg.p_therm {
                    Level::G
                } else {
                    Level::E
                }
            }
            InitialStatePrep::Mixed => {
                if rng.random::<f64>() < 0.5 {
                    Level::G
                } else {
                    Level::E
                }
            }
            InitialStatePrep::QutritMixed => {
                if self.cfg.levels != 3 {
                    return Err(Error::config(
                        "env.levels",
                        "qutrit-mixed preparation needs levels = 3",
                    ));
                }
                let u = rng.random::<f64>() * 3.0;
                if u < 1.0 {
                    Level::G
                } else if u < 2.0 {
                    Level::E
                } else {
                    Level::F
                }
            }
        };
        Ok(EnvState::new(level))
    }

    fn exit(&self, level: Level) -> (f64, Level) {
        match level {
            Level::G => (self.cfg.p_therm / self.cfg.t1_e, Level::E),
            Level::E => (1.0 / self.cfg.t1_e, Level::G),
            Level::F => (1.0 / self.cfg.t1_f, Level::E),
        }
    }

    /// Sample the jump path over `[0, duration]`, starting with `(0, level)`.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        level: Level,
        duration: f64,
        rng: &mut R,
    ) -> Vec<(f64, Level)> {
        let mut path = vec![(0.0, level)];
        let mut t = 0.0;
        let mut current = level;
        loop {
            let (rate, next) = self.exit(current);
            if rate <= 0.0 {
                break;
            }
            let dt: f64 = Exp::new(rate).expect("positive rate").sample(rng);
            t += dt;
            if t > duration {
                break;
            }
            current = next;
            path.push((t, current));
        }
        path
    }

    /// Free evolution for `duration` seconds.
    pub fn evolve<R: Rng + ?Sized>(&self, state: EnvState, duration: f64, rng: &mut R) -> EnvState {
        if duration <= 0.0 {
            return state;
        }
        let path = self.sample_path(state.level, duration, rng);
        EnvState::new(path[path.len() - 1].1)
    }

    pub fn measure<R: Rng + ?Sized>(
        &self,
        state: EnvState,
        strength: Strength,
        rng: &mut R,
    ) -> (Trace, EnvState) {
        self.measure_with_noise(state, self.noise_sigma(strength), rng)
    }

    /// Readout with an explicit per-sample noise σ (σ = 0 gives the noiseless
    /// concatenation of mean traces).
    pub fn measure_with_noise<R: Rng + ?Sized>(
        &self,
        state: EnvState,
        sigma: f64,
        rng: &mut R,
    ) -> (Trace, EnvState) {
        let n = self.cfg.readout_len;
        let dt = 1.0 / self.cfg.sample_rate;
        let path = self.sample_path(state.level, n as f64 * dt, rng);
        let mut i_samples = Vec::with_capacity(n);
        let mut q_samples = Vec::with_capacity(n);
        let mut seg = 0;
        for k in 0..n {
            let t = k as f64 * dt;
            while seg + 1 < path.len() && path[seg + 1].0 <= t {
                seg += 1;
            }
            let mean = self.mean_trace(path[seg].1);
            let (ni, nq): (f64, f64) = if sigma > 0.0 {
                (StandardNormal.sample(rng), StandardNormal.sample(rng))
            } else {
                (0.0, 0.0)
            };
            i_samples.push(mean.i[k] + sigma * ni);
            q_samples.push(mean.q[k] + sigma * nq);
        }
        let post = EnvState::new(path[path.len() - 1].1);
        (
            Trace {
                i_samples,
                q_samples,
                latent_path: path,
            },
            post,
        )
    }

    fn pulse<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        self.cfg.flip_error == 0.0 || rng.random::<f64>() >= self.cfg.flip_error
    }

    /// Apply an action's pulse. `Flip` swaps g↔e. `GfFlip` is a π-pulse on
    /// the f–e transition followed by a π-pulse on the e–g transition, each
    /// failing independently with `flip_error`; f → g on success.
    pub fn apply_action<R: Rng + ?Sized>(
        &self,
        state: EnvState,
        action: Action,
        rng: &mut R,
    ) -> Result<EnvState> {
        let swap_ge = |l: Level| match l {
            Level::G => Level::E,
            Level::E => Level::G,
            Level::F => Level::F,
        };
        let swap_ef = |l: Level| match l {
            Level::E => Level::F,
            Level::F => Level::E,
            Level::G => Level::G,
        };
        let level = match action {
            Action::Idle | Action::Terminate => state.level,
            Action::Flip => {
                if self.pulse(rng) {
                    swap_ge(state.level)
                } else {
                    state.level
                }
            }
            Action::GfFlip => {
                if self.cfg.levels != 3 {
                    return Err(Error::Protocol("gf-flip requires a three-level environment".into()));
                }
                let mut l = state.level;
                if self.pulse(rng) {
                    l = swap_ef(l);
                }
                if self.pulse(rng) {
                    l = swap_ge(l);
                }
                l
            }
        };
        Ok(EnvState::new(level))
    }

    /// Run one initialization episode with `policy` deciding after each readout.
    ///
    /// Each cycle: readout, wait `feedback_latency`, apply the action, wait
    /// out the rest of `cycle_time`. On `Terminate` the state evolves for
    /// `verify_delay` before the verification readout (always strong). If the
    /// cap is reached the last action is applied and verification follows one
    /// cycle later with `forced_termination` set.
    pub fn run_episode<R, P>(
        &self,
        policy: &mut P,
        prep: InitialStatePrep,
        strength: Strength,
        max_cycles: usize,
        rng: &mut R,
    ) -> Result<Episode>
    where
        R: Rng + ?Sized,
        P: FnMut(&EpisodeView<'_>) -> Action,
    {
        if max_cycles == 0 {
            return Err(Error::config("max_cycles", "must be >= 1"));
        }
        let mut state = self.prepare(prep, rng)?;
        let initial = state.level;
        let mut steps: Vec<Step> = Vec::new();
        let rest = (self.cfg.cycle_time - self.cfg.readout_duration() - self.cfg.feedback_latency).max(0.0);
        let mut forced = false;
        loop {
            let (trace, post) = self.measure(state, strength, rng);
            state = post;
            let action = policy(&EpisodeView {
                history: &steps,
                current: &trace,
            });
            if action == Action::GfFlip && self.cfg.levels != 3 {
                return Err(Error::Protocol(format!(
                    "policy chose gf-flip at cycle {} in a two-level environment",
                    steps.len() + 1
                )));
            }
            steps.push(Step { trace, action });
            if action == Action::Terminate {
                state = self.evolve(state, self.cfg.verify_delay, rng);
                break;
            }
            state = self.evolve(state, self.cfg.feedback_latency, rng);
            state = self.apply_action(state, action, rng)?;
            state = self.evolve(state, rest, rng);
            if steps.len() >= max_cycles {
                forced = true;
                break;
            }
        }
        let (verification, post) = self.measure(state, Strength::Strong, rng);
        Ok(Episode {
            initial,
            steps,
            verification,
            final_level: post.level,
            forced_termination: forced,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env(cfg: EnvConfig) -> Environment {
        Environment::new(cfg).unwrap()
    }

    fn binomial_ok(count: usize, n: usize, p: f64, k_sigma: f64) -> bool {
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        (count as f64 - mean).abs() <= k_sigma * sd
    }

    #[test]
    fn equilibrium_preparation_matches_thermal_population() {
        let e = env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let excited = (0..n)
            .filter(|_| e.prepare(InitialStatePrep::Equilibrium, &mut rng).unwrap().level == Level::E)
            .count();
        assert!(binomial_ok(excited, n, 0.014, 3.0), "{excited}");
    }

    #[test]
    fn zero_thermal_population_always_ground() {
        let e = env(EnvConfig {
            p_therm: 0.0,
            ..Default::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            assert_eq!(e.prepare(InitialStatePrep::Equilibrium, &mut rng).unwrap().level, Level::G);
        }
    }

    #[test]
    fn qutrit_mixed_is_uniform_and_needs_three_levels() {
        let qubit = env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            qubit.prepare(InitialStatePrep::QutritMixed, &mut rng),
            Err(Error::Config { .. })
        ));
        let e = env(EnvConfig::qutrit());
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[e.prepare(InitialStatePrep::QutritMixed, &mut rng).unwrap().level.index()] += 1;
        }
        for c in counts {
            assert!(binomial_ok(c, n, 1.0 / 3.0, 3.0), "{counts:?}");
        }
    }

    #[test]
    fn zero_duration_leaves_state_unchanged() {
        let e = env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for l in [Level::G, Level::E] {
            assert_eq!(e.evolve(EnvState::new(l), 0.0, &mut rng).level, l);
        }
    }

    #[test]
    fn excited_decay_follows_exponential() {
        let cfg = EnvConfig::default();
        let t1 = cfg.t1_e;
        // no re-excitation so the oracle is the pure exponential
        let e = env(EnvConfig { p_therm: 0.0, ..cfg });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let survived = (0..n)
            .filter(|_| e.evolve(EnvState::new(Level::E), t1, &mut rng).level == Level::E)
            .count();
        assert!(binomial_ok(survived, n, (-1.0f64).exp(), 3.0), "{survived}");
    }

    #[test]
    fn rethermalization_first_order_rate() {
        let cfg = EnvConfig::default();
        let duration = 1e-3 * cfg.t1_e / cfg.p_therm;
        let e = env(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 400_000;
        let excited = (0..n)
            .filter(|_| e.evolve(EnvState::new(Level::G), duration, &mut rng).level == Level::E)
            .count();
        // first order in the rate; second-order correction is O(1e-6)
        assert!(binomial_ok(excited, n, 1e-3, 4.0), "{excited}");
    }

    #[test]
    fn long_evolution_reaches_thermal_population() {
        let cfg = EnvConfig::default();
        let horizon = 10.0 * cfg.t1_e;
        let e = env(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let excited = (0..n)
            .filter(|_| e.evolve(EnvState::new(Level::G), horizon, &mut rng).level == Level::E)
            .count();
        // stationary value of the two-level chain is p/(1+p)
        let p = 0.014 / 1.014;
        assert!(binomial_ok(excited, n, p, 3.0), "{excited}");
        assert!(binomial_ok(excited, n, 0.014, 4.0), "{excited}");
    }

    #[test]
    fn noiseless_ground_trace_equals_mean() {
        let e = env(EnvConfig {
            p_therm: 0.0,
            ..Default::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (trace, post) = e.measure_with_noise(EnvState::new(Level::G), 0.0, &mut rng);
        assert_eq!(post.level, Level::G);
        assert_eq!(trace.i_samples, e.mean_traces().g.i);
        assert_eq!(trace.q_samples, e.mean_traces().g.q);
        assert_eq!(trace.latent_path, vec![(0.0, Level::G)]);
    }

    #[test]
    fn latent_path_is_consistent() {
        let e = env(EnvConfig {
            t1_e: 100e-9,
            p_therm: 0.3,
            ..Default::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2_000 {
            let start = if rng.random::<bool>() { Level::G } else { Level::E };
            let (trace, post) = e.measure(EnvState::new(start), Strength::Strong, &mut rng);
            assert_eq!(trace.initial_level(), start);
            assert_eq!(trace.final_level(), post.level);
            assert_eq!(trace.i_samples.len(), trace.q_samples.len());
            let dur = e.config().readout_duration();
            for w in trace.latent_path.windows(2) {
                assert!(w[1].0 > w[0].0 && w[1].0 <= dur);
            }
        }
    }

    #[test]
    fn perfect_pulses() {
        let e = env(EnvConfig {
            flip_error: 0.0,
            ..EnvConfig::qutrit()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = |l| EnvState::new(l);
        assert_eq!(e.apply_action(s(Level::G), Action::Flip, &mut rng).unwrap().level, Level::E);
        assert_eq!(e.apply_action(s(Level::F), Action::Flip, &mut rng).unwrap().level, Level::F);
        assert_eq!(e.apply_action(s(Level::F), Action::GfFlip, &mut rng).unwrap().level, Level::G);
        assert_eq!(e.apply_action(s(Level::E), Action::Idle, &mut rng).unwrap().level, Level::E);
        assert_eq!(e.apply_action(s(Level::E), Action::Terminate, &mut rng).unwrap().level, Level::E);
        // the two-pulse sequence is a 3-cycle g → e → f → g
        assert_eq!(e.apply_action(s(Level::G), Action::GfFlip, &mut rng).unwrap().level, Level::E);
        assert_eq!(e.apply_action(s(Level::E), Action::GfFlip, &mut rng).unwrap().level, Level::F);
        for l in [Level::G, Level::E] {
            let once = e.apply_action(s(l), Action::Flip, &mut rng).unwrap();
            assert_eq!(e.apply_action(once, Action::Flip, &mut rng).unwrap().level, l);
        }
        for l in [Level::G, Level::E, Level::F] {
            let mut x = s(l);
            for _ in 0..3 {
                x = e.apply_action(x, Action::GfFlip, &mut rng).unwrap();
            }
            assert_eq!(x.level, l);
        }
    }

    #[test]
    fn gf_flip_rejected_for_qubit() {
        let e = env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert!(matches!(
            e.apply_action(EnvState::new(Level::G), Action::GfFlip, &mut rng),
            Err(Error::Protocol(_))
        ));
        let err = e
            .run_episode(
                &mut |_: &EpisodeView| Action::GfFlip,
                InitialStatePrep::Equilibrium,
                Strength::Strong,
                5,
                &mut rng,
            )
            .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn terminate_policy_gives_single_cycle() {
        let e = env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ep = e
            .run_episode(
                &mut |_: &EpisodeView| Action::Terminate,
                InitialStatePrep::Equilibrium,
                Strength::Strong,
                10,
                &mut rng,
            )
            .unwrap();
        assert_eq!(ep.n_cycles(), 1);
        assert!(!ep.forced_termination);
        assert_eq!(ep.verification.len(), 256);
    }

    #[test]
    fn idle_policy_hits_cap() {
        let e = env(EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ep = e
            .run_episode(
                &mut |_: &EpisodeView| Action::Idle,
                InitialStatePrep::Equilibrium,
                Strength::Strong,
                5,
                &mut rng,
            )
            .unwrap();
        assert_eq!(ep.n_cycles(), 5);
        assert!(ep.forced_termination);
    }

    #[test]
    fn identical_seed_identical_episode() {
        let e = env(EnvConfig::default());
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut k = 0;
            e.run_episode(
                &mut |_: &EpisodeView| {
                    k += 1;
                    if k < 3 {
                        Action::Flip
                    } else {
                        Action::Terminate
                    }
                },
                InitialStatePrep::Inverted,
                Strength::Weak,
                10,
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(77), run(77));
    }
}
