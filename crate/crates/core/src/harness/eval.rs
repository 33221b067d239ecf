use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{PolicySample, ThresholdAgent};
use crate::envsim::{Action, EnvState, Environment, EpisodeView, InitialStatePrep, Level, Strength};
use crate::error::{Error, Result};
use crate::nn::{sample_index, ObservationWindow, PolicyNet};
use crate::ppo::ActionSelection;
use crate::readout::{
    estimate_qutrit_weights, estimate_weights, fit_mixture_1d, fit_mixture_2d, Binning, FilterWeights, FitOptions,
    Gauss2d, Histogram1d, Histogram2d, Mixture1d, Mixture2d,
};

/// Episodes per deterministic work unit. Each chunk has its own rng stream,
/// so results do not depend on the thread count.
pub const CHUNK_EPISODES: usize = 500;

/// Readout calibration from heralded simulated ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub u_weights: FilterWeights,
    /// Second axis for three-level readout.
    pub w_weights: Option<FilterWeights>,
    /// Strong-readout g/e mixture on U (verification shape).
    pub strong: Mixture1d,
    /// Weak-readout g/e mixture on U, equal variances.
    pub weak: Mixture1d,
    /// Strong-readout g/e/f mixture on (U, W).
    pub plane: Option<Mixture2d>,
}

impl Calibration {
    pub fn u_g(&self) -> f64 {
        self.strong.components[0].mean
    }

    pub fn u_e(&self) -> f64 {
        self.strong.components[1].mean
    }

    pub fn shape(&self, strength: Strength) -> &Mixture1d {
        match strength {
            Strength::Strong => &self.strong,
            Strength::Weak => &self.weak,
        }
    }
}

pub fn calibrate(env: &Environment, shots: usize, seed: u64) -> Result<Calibration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qutrit = env.config().levels == 3;
    let levels: &[Level] = if qutrit { &[Level::G, Level::E, Level::F] } else { &[Level::G, Level::E] };
    let mut ensembles = Vec::new();
    for &l in levels {
        let traces: Vec<_> = (0..shots).map(|_| env.measure(EnvState::new(l), Strength::Strong, &mut rng).0).collect();
        ensembles.push(traces);
    }
    let (u_weights, w_weights) = if qutrit {
        let (u, w) = estimate_qutrit_weights(&ensembles[0], &ensembles[1], &ensembles[2])?;
        (u, Some(w))
    } else {
        (estimate_weights(&ensembles[0], &ensembles[1])?, None)
    };
    let fit_ge = |strength: Strength, rng: &mut ChaCha8Rng| -> Result<Mixture1d> {
        let mut us = Vec::with_capacity(2 * shots);
        for (k, ens) in ensembles.iter().take(2).enumerate() {
            for t in ens {
                if strength == Strength::Strong {
                    us.push(u_weights.integrate(t)?);
                } else {
                    let (tr, _) = env.measure(EnvState::new(levels[k]), Strength::Weak, rng);
                    us.push(u_weights.integrate(&tr)?);
                }
            }
        }
        let h = Histogram1d::from_samples(&us, Binning::default())?;
        let mut opts = FitOptions::new(2);
        opts.equal_variance = strength == Strength::Weak;
        Ok(fit_mixture_1d(&h, &opts)?.fit)
    };
    let strong = fit_ge(Strength::Strong, &mut rng)?;
    let weak = fit_ge(Strength::Weak, &mut rng)?;
    let plane = match &w_weights {
        Some(ww) => {
            let mut pts = Vec::with_capacity(3 * shots);
            let mut init = Vec::new();
            for ens in &ensembles {
                let p: Vec<(f64, f64)> = ens
                    .iter()
                    .map(|t| Ok((u_weights.integrate(t)?, ww.integrate(t)?)))
                    .collect::<Result<_>>()?;
                let n = p.len() as f64;
                let mean = [p.iter().map(|x| x.0).sum::<f64>() / n, p.iter().map(|x| x.1).sum::<f64>() / n];
                init.push(Gauss2d { amplitude: n, mean, cov: [[0.05, 0.0], [0.0, 0.05]] });
                pts.extend(p);
            }
            let h = Histogram2d::from_points(&pts, 64)?;
            let mut opts = FitOptions::new(3);
            opts.initial = Some(Mixture2d { components: init });
            Some(fit_mixture_2d(&h, &opts)?.fit)
        }
        None => None,
    };
    Ok(Calibration { u_weights, w_weights, strong, weak, plane })
}

/// Something that maps an episode view to action probabilities.
pub trait EpisodePolicy: Sync {
    fn n_actions(&self) -> usize;
    fn probs(&self, view: &EpisodeView<'_>) -> Result<Vec<f64>>;
}

impl EpisodePolicy for PolicyNet {
    fn n_actions(&self) -> usize {
        self.topology().n_actions
    }

    fn probs(&self, view: &EpisodeView<'_>) -> Result<Vec<f64>> {
        self.forward(&ObservationWindow::from_view(self.topology(), view)?)
    }
}

fn one_hot(a: Action, n: usize) -> Vec<f64> {
    (0..n).map(|k| f64::from(k == a.index())).collect()
}

impl EpisodePolicy for ThresholdAgent {
    fn n_actions(&self) -> usize {
        if self.policy.qutrit.as_ref().is_some_and(|q| q.f_action == Action::GfFlip) {
            4
        } else {
            3
        }
    }

    fn probs(&self, view: &EpisodeView<'_>) -> Result<Vec<f64>> {
        Ok(one_hot(self.decide_view(view)?, self.n_actions()))
    }
}

/// Test-only reference that reads the hidden level at the end of each
/// readout: terminate in g, flip from e, and clear f with `f_action`.
#[derive(Debug, Clone, Copy)]
pub struct OraclePolicy {
    pub f_action: Action,
}

impl EpisodePolicy for OraclePolicy {
    fn n_actions(&self) -> usize {
        if self.f_action == Action::GfFlip {
            4
        } else {
            3
        }
    }

    fn probs(&self, view: &EpisodeView<'_>) -> Result<Vec<f64>> {
        let a = match view.current.final_level() {
            Level::G => Action::Terminate,
            Level::E => Action::Flip,
            Level::F => self.f_action,
        };
        Ok(one_hot(a, self.n_actions()))
    }
}

/// Per-decision probe for policy maps: `(U_t, U_{t−1} or NaN, W_t or NaN)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub u: f64,
    pub u_prev: f64,
    pub w: f64,
    pub probs: Vec<f64>,
}

impl Probe {
    pub fn sample_u(&self) -> PolicySample {
        PolicySample { coords: vec![self.u], probs: self.probs.clone() }
    }

    pub fn sample_u_prev(&self) -> Option<PolicySample> {
        self.u_prev.is_finite().then(|| PolicySample { coords: vec![self.u, self.u_prev], probs: self.probs.clone() })
    }

    pub fn sample_uw(&self) -> Option<PolicySample> {
        self.w.is_finite().then(|| PolicySample { coords: vec![self.u, self.w], probs: self.probs.clone() })
    }
}

/// Raw outcome of one validation episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub cycles: usize,
    pub u_ver: f64,
    /// NaN when the readout has no second quadrature filter.
    pub w_ver: f64,
    /// Hidden level at the start of verification.
    pub verified: Level,
    pub forced: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RawEval {
    pub outcomes: Vec<EpisodeOutcome>,
    pub action_counts: Vec<u64>,
    pub probes: Vec<Probe>,
}

/// Run `n` episodes in deterministic chunks across `threads` workers.
#[allow(clippy::too_many_arguments)]
pub fn run_validation<P: EpisodePolicy + ?Sized>(
    env: &Environment,
    policy: &P,
    cal: &Calibration,
    prep: InitialStatePrep,
    strength: Strength,
    selection: ActionSelection,
    n: usize,
    seed: u64,
    threads: usize,
    max_probes: usize,
) -> Result<RawEval> {
    let n_chunks = n.div_ceil(CHUNK_EPISODES);
    let probes_per_chunk = max_probes.div_ceil(n_chunks.max(1));
    let work = |c: usize| -> Result<RawEval> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64 + 1);
        let count = CHUNK_EPISODES.min(n - c * CHUNK_EPISODES);
        run_chunk(env, policy, cal, prep, strength, selection, count, probes_per_chunk, &mut rng)
    };
    let threads = threads.max(1).min(n_chunks.max(1));
    let results: Vec<Result<RawEval>> = if threads == 1 {
        (0..n_chunks).map(work).collect()
    } else {
        let mut slots: Vec<Option<Result<RawEval>>> = (0..n_chunks).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let work = &work;
                    s.spawn(move || (t..n_chunks).step_by(threads).map(|c| (c, work(c))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (c, r) in h.join().expect("validation worker panicked") {
                    slots[c] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk ran")).collect()
    };
    let mut out = RawEval { action_counts: vec![0; policy.n_actions()], ..Default::default() };
    for r in results {
        let r = r?;
        out.outcomes.extend(r.outcomes);
        out.probes.extend(r.probes);
        for (a, b) in out.action_counts.iter_mut().zip(r.action_counts) {
            *a += b;
        }
    }
    out.probes.truncate(max_probes);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_chunk<P: EpisodePolicy + ?Sized>(
    env: &Environment,
    policy: &P,
    cal: &Calibration,
    prep: InitialStatePrep,
    strength: Strength,
    selection: ActionSelection,
    count: usize,
    max_probes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RawEval> {
    let n_actions = policy.n_actions();
    let mut out = RawEval { action_counts: vec![0; n_actions], ..Default::default() };
    let max_cycles = env.config().max_cycles;
    for _ in 0..count {
        let mut action_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut failure: Option<Error> = None;
        let mut u_prev = f64::NAN;
        let probes = &mut out.probes;
        let counts = &mut out.action_counts;
        let ep = env.run_episode(
            &mut |view: &EpisodeView<'_>| {
                if failure.is_some() {
                    return Action::Terminate;
                }
                let mut pick = || -> Result<Action> {
                    let probs = policy.probs(view)?;
                    let k = match selection {
                        ActionSelection::Stochastic => sample_index(&probs, &mut action_rng)?,
                        ActionSelection::Argmax => (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap_or(0),
                    };
                    if probes.len() < max_probes {
                        let u = cal.u_weights.integrate(view.current)?;
                        let w = match &cal.w_weights {
                            Some(ww) => ww.integrate(view.current)?,
                            None => f64::NAN,
                        };
                        probes.push(Probe { u, u_prev, w, probs: probs.clone() });
                        u_prev = u;
                    }
                    counts[k] += 1;
                    Action::from_index(k).ok_or_else(|| Error::Protocol(format!("action index {k}")))
                };
                pick().unwrap_or_else(|e| {
                    failure = Some(e);
                    Action::Terminate
                })
            },
            prep,
            strength,
            max_cycles,
            rng,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        let u_ver = cal.u_weights.integrate(&ep.verification)?;
        let w_ver = match &cal.w_weights {
            Some(ww) => ww.integrate(&ep.verification)?,
            None => f64::NAN,
        };
        out.outcomes.push(EpisodeOutcome {
            cycles: ep.n_cycles(),
            u_ver,
            w_ver,
            verified: ep.verified_level(),
            forced: ep.forced_termination,
        });
    }
    Ok(out)
}

/// Ground-state population by a fixed-shape amplitude fit of verification
/// signals (never by thresholding).
pub fn fitted_ground_population(cal: &Calibration, u: &[f64], w: &[f64]) -> Result<f64> {
    match &cal.plane {
        Some(plane) => {
            let (lo_u, hi_u, lo_w, hi_w) = plane_bounds(plane);
            let mut h = Histogram2d::empty((lo_u, hi_u, 48), (lo_w, hi_w, 48));
            for (&a, &b) in u.iter().zip(w) {
                h.add(a, b);
            }
            let rep = fit_mixture_2d(&h, &FitOptions::fixed(plane.clone(), plane.components.len()))?;
            Ok(rep.fit.populations()[0])
        }
        None => {
            let (lo, hi) = line_bounds(&cal.strong);
            let h = Histogram1d::from_samples(u, Binning::Fixed { lo, hi, bins: 120 })?;
            let rep = fit_mixture_1d(&h, &FitOptions::fixed(cal.strong.clone(), 2))?;
            Ok(rep.fit.populations()[0])
        }
    }
}

fn line_bounds(m: &Mixture1d) -> (f64, f64) {
    let lo = m.components.iter().map(|c| c.mean - 5.0 * c.sigma).fold(f64::INFINITY, f64::min);
    let hi = m.components.iter().map(|c| c.mean + 5.0 * c.sigma).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn plane_bounds(m: &Mixture2d) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in &m.components {
        let (su, sw) = (c.cov[0][0].sqrt(), c.cov[1][1].sqrt());
        b.0 = b.0.min(c.mean[0] - 5.0 * su);
        b.1 = b.1.max(c.mean[0] + 5.0 * su);
        b.2 = b.2.min(c.mean[1] - 5.0 * sw);
        b.3 = b.3.max(c.mean[1] + 5.0 * sw);
    }
    b
}

/// Validation summary for one preparation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub prep: InitialStatePrep,
    pub episodes: usize,
    /// 1 − P_g from the mixture fit of verification signals.
    pub infidelity: f64,
    /// Bootstrap 95 % interval of `infidelity`.
    pub infidelity_ci: [f64; 2],
    /// Fraction not in g at verification (hidden truth, diagnostics only).
    pub latent_infidelity: f64,
    pub mean_cycles: f64,
    /// Standard error of `mean_cycles`.
    pub mean_cycles_se: f64,
    /// Fraction of decisions per action index.
    pub action_frequencies: Vec<f64>,
    pub forced_terminations: usize,
}

/// Summarize raw outcomes; `resamples` bootstrap refits give the interval.
pub fn summarize(cal: &Calibration, prep: InitialStatePrep, raw: &RawEval, resamples: usize, seed: u64) -> Result<EvalMetrics> {
    let n = raw.outcomes.len();
    if n == 0 {
        return Err(Error::Data("no validation episodes".into()));
    }
    let u: Vec<f64> = raw.outcomes.iter().map(|o| o.u_ver).collect();
    let w: Vec<f64> = raw.outcomes.iter().map(|o| o.w_ver).collect();
    let infidelity = 1.0 - fitted_ground_population(cal, &u, &w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot = Vec::with_capacity(resamples);
    let mut bu = vec![0.0; n];
    let mut bw = vec![0.0; n];
    for _ in 0..resamples {
        for k in 0..n {
            let j = rng.random_range(0..n);
            bu[k] = u[j];
            bw[k] = w[j];
        }
        boot.push(1.0 - fitted_ground_population(cal, &bu, &bw)?);
    }
    boot.sort_by(f64::total_cmp);
    let ci = if boot.is_empty() {
        [infidelity, infidelity]
    } else {
        let at = |q: f64| boot[((q * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        [at(0.025), at(0.975)]
    };
    let cycles: Vec<f64> = raw.outcomes.iter().map(|o| o.cycles as f64).collect();
    let mean = cycles.iter().sum::<f64>() / n as f64;
    let var = cycles.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n.max(2) - 1) as f64;
    let total: u64 = raw.action_counts.iter().sum();
    Ok(EvalMetrics {
        prep,
        episodes: n,
        infidelity,
        infidelity_ci: ci,
        latent_infidelity: raw.outcomes.iter().filter(|o| o.verified != Level::G).count() as f64 / n as f64,
        mean_cycles: mean,
        mean_cycles_se: (var / n as f64).sqrt(),
        action_frequencies: raw.action_counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect(),
        forced_terminations: raw.outcomes.iter().filter(|o| o.forced).count(),
    })
}
