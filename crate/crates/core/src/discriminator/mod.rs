//! Supervised state discrimination: the streaming network trained as a
//! two-class classifier on truncated traces, compared against a matched
//! filter with an optimized threshold.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{EnvConfig, EnvState, Environment, Level, Strength};
use crate::error::{Error, Result};
use crate::linalg::normal_cdf;
use crate::nn::{NetTopology, ObservationWindow, PolicyNet};
use crate::ppo::Adam;
use crate::readout::FilterWeights;

/// Downsampled values per quadrature the classifier sees at every τ.
pub const CLASSIFIER_SAMPLES: usize = 32;

/// Every n-th training trace is held out for early stopping.
pub const HOLDOUT_STRIDE: usize = 4;

/// One labelled readout. Samples are stored single precision to keep long
/// trace sets in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTrace {
    pub label: Level,
    pub i: Vec<f32>,
    pub q: Vec<f32>,
    /// Hidden jump path for simulated traces; empty when loaded from disk.
    pub latent_path: Vec<(f64, Level)>,
}

impl LabeledTrace {
    fn prefix(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.i[..n].iter().map(|&v| v as f64).collect(),
            self.q[..n].iter().map(|&v| v as f64).collect(),
        )
    }

    /// Whether the hidden state changed before time `t`.
    pub fn jumped_before(&self, t: f64) -> bool {
        self.latent_path.iter().skip(1).any(|(tj, _)| *tj < t)
    }
}

/// Labelled g/e traces with an interleaved split: every
/// `validation_stride`-th trace (index ≡ stride−1) is validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTraceSet {
    pub traces: Vec<LabeledTrace>,
    pub sample_rate: f64,
    /// Labels are exact preparations rather than thermally contaminated ones.
    pub heralded: bool,
    pub validation_stride: usize,
}

impl LabeledTraceSet {
    pub fn is_validation(&self, k: usize) -> bool {
        k % self.validation_stride == self.validation_stride - 1
    }

    pub fn train(&self) -> impl Iterator<Item = &LabeledTrace> {
        self.traces.iter().enumerate().filter(|(k, _)| !self.is_validation(*k)).map(|(_, t)| t)
    }

    pub fn validation(&self) -> impl Iterator<Item = &LabeledTrace> {
        self.traces.iter().enumerate().filter(|(k, _)| self.is_validation(*k)).map(|(_, t)| t)
    }

    pub fn trace_len(&self) -> usize {
        self.traces.first().map_or(0, |t| t.i.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.validation_stride < 2 {
            return Err(Error::config("discrimination.validation_stride", "must be >= 2"));
        }
        let n = self.trace_len();
        if n == 0 {
            return Err(Error::Data("empty trace set".into()));
        }
        if self.traces.iter().any(|t| t.i.len() != n || t.q.len() != n) {
            return Err(Error::Shape("traces differ in length".into()));
        }
        for part in [true, false] {
            let (mut g, mut e) = (0usize, 0usize);
            for (k, t) in self.traces.iter().enumerate() {
                if self.is_validation(k) != part {
                    continue;
                }
                match t.label {
                    Level::G => g += 1,
                    Level::E => e += 1,
                    Level::F => return Err(Error::Data("f label in a two-class set".into())),
                }
            }
            if g == 0 || e == 0 || (g as f64 - e as f64).abs() > 0.1 * (g + e) as f64 {
                return Err(Error::Data(format!("labels unbalanced: {g} g vs {e} e")));
            }
        }
        Ok(())
    }

    /// Long-format CSV: `trace,label,sample,I,Q`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        w.write_record(["trace", "label", "sample", "I", "Q"]).map_err(|e| Error::parse(path, e))?;
        for (k, t) in self.traces.iter().enumerate() {
            let label = if t.label == Level::G { "g" } else { "e" };
            for s in 0..t.i.len() {
                w.write_record([k.to_string(), label.into(), s.to_string(), t.i[s].to_string(), t.q[s].to_string()])
                    .map_err(|e| Error::parse(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, sample_rate: f64, validation_stride: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        let mut traces: Vec<LabeledTrace> = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            let bad = |m: &str| Error::parse(path, format!("row {}: {m}", row + 1));
            if rec.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            let k: usize = rec[0].parse().map_err(|_| bad("bad trace index"))?;
            let label = match &rec[1] {
                "g" => Level::G,
                "e" => Level::E,
                _ => return Err(bad("label must be g or e")),
            };
            let i: f32 = rec[3].parse().map_err(|_| bad("bad I value"))?;
            let q: f32 = rec[4].parse().map_err(|_| bad("bad Q value"))?;
            if k == traces.len() {
                traces.push(LabeledTrace { label, i: Vec::new(), q: Vec::new(), latent_path: Vec::new() });
            } else if k + 1 != traces.len() {
                return Err(bad("trace rows must be contiguous"));
            }
            let t = traces.last_mut().expect("pushed above");
            t.i.push(i);
            t.q.push(q);
        }
        let set = LabeledTraceSet { traces, sample_rate, heralded: true, validation_stride };
        set.validate()?;
        Ok(set)
    }
}

/// Simulate `n` traces of `len` samples, labelled g, g, e, e, ... so both
/// halves of the interleaved split stay balanced.
///
/// Heralded sets start exactly in the labelled level; otherwise the label
/// is the intended preparation and the thermal excess is left in.
pub fn simulate_labeled_set<R: Rng + ?Sized>(
    env_cfg: &EnvConfig,
    n: usize,
    len: usize,
    heralded: bool,
    rng: &mut R,
) -> Result<LabeledTraceSet> {
    let base = Environment::new(env_cfg.clone())?;
    let sigma = base.noise_sigma(Strength::Strong);
    let long = Environment::new(EnvConfig {
        readout_len: len,
        levels: 2,
        cycle_time: env_cfg.cycle_time.max(len as f64 / env_cfg.sample_rate + env_cfg.feedback_latency),
        ..env_cfg.clone()
    })?;
    let p = env_cfg.p_therm;
    let traces = (0..n)
        .map(|k| {
            let label = if (k / 2) % 2 == 0 { Level::G } else { Level::E };
            let flip = !heralded && rng.random::<f64>() < p;
            let actual = match (label, flip) {
                (Level::G, true) => Level::E,
                (Level::E, true) => Level::G,
                (l, _) => l,
            };
            let (tr, _) = long.measure_with_noise(EnvState::new(actual), sigma, rng);
            LabeledTrace {
                label,
                i: tr.i_samples.iter().map(|&v| v as f32).collect(),
                q: tr.q_samples.iter().map(|&v| v as f32).collect(),
                latent_path: tr.latent_path,
            }
        })
        .collect();
    Ok(LabeledTraceSet { traces, sample_rate: env_cfg.sample_rate, heralded, validation_stride: 2 })
}

/// Streaming topology for observation length `tau_samples`: the boxcar is
/// widened so every τ maps onto the same 32 downsampled values.
pub fn classifier_topology(tau_samples: usize) -> Result<NetTopology> {
    if tau_samples == 0 || tau_samples % CLASSIFIER_SAMPLES != 0 {
        return Err(Error::config(
            "discrimination.tau_samples",
            format!("τ must be a positive multiple of {CLASSIFIER_SAMPLES} samples, got {tau_samples}"),
        ));
    }
    let t = NetTopology {
        n_actions: 2,
        readout_len: tau_samples,
        boxcar_width: tau_samples / CLASSIFIER_SAMPLES,
        memory_boxcar_width: tau_samples / CLASSIFIER_SAMPLES,
        ..NetTopology::default()
    };
    t.validate("discrimination.topology.")?;
    Ok(t)
}

/// Supervised-training settings; the Adam defaults follow the PPO trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub minibatch: usize,
    pub max_epochs: usize,
    /// Training stops once the holdout loss has not improved by this
    /// relative amount for `patience` epochs.
    pub rel_tol: f64,
    pub patience: usize,
    pub restarts: usize,
    pub output_gain: f64,
    /// Candidate L2 penalties on kernels (biases are not penalized); each
    /// is trained `restarts` times and the holdout picks the winner.
    pub weight_decay: Vec<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.98,
            adam_beta2: 0.999,
            adam_eps: 1e-5,
            minibatch: 256,
            max_epochs: 200,
            rel_tol: 1e-3,
            patience: 10,
            restarts: 2,
            output_gain: 0.01,
            weight_decay: vec![1e-2],
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let p = "discrimination.classifier.";
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("{p}learning_rate"), "must be > 0"));
        }
        if self.weight_decay.is_empty() || self.weight_decay.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::config(format!("{p}weight_decay"), "needs at least one value >= 0"));
        }
        if self.minibatch == 0 || self.max_epochs == 0 || self.restarts == 0 || self.patience == 0 {
            return Err(Error::config(
                format!("{p}minibatch"),
                "minibatch, max_epochs, patience and restarts must be >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub net: PolicyNet,
    /// Mean cross-entropy on the early-stopping holdout at the kept epoch.
    pub holdout_loss: f64,
    pub epochs: usize,
    /// False if the epoch cap was hit while the holdout loss still improved.
    pub converged: bool,
}

impl TrainedClassifier {
    /// Assigned level for one trace (argmax of the two-class output).
    pub fn classify(&self, t: &LabeledTrace) -> Result<Level> {
        let w = window_for(self.net.topology(), t)?;
        let p = self.net.forward(&w)?;
        Ok(if p[1] > p[0] { Level::E } else { Level::G })
    }
}

fn window_for(topo: &NetTopology, t: &LabeledTrace) -> Result<ObservationWindow> {
    if t.i.len() < topo.readout_len {
        return Err(Error::Shape(format!("trace shorter than τ = {} samples", topo.readout_len)));
    }
    let (i, q) = t.prefix(topo.readout_len);
    ObservationWindow::build(topo, &[], &i, &q)
}

fn class(l: Level) -> usize {
    usize::from(l == Level::E)
}

fn mean_loss(net: &PolicyNet, data: &[(ObservationWindow, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (w, y) in data {
        total -= net.forward(w)?[*y].max(1e-300).ln();
    }
    Ok(total / data.len().max(1) as f64)
}

fn train_once(
    topo: &NetTopology,
    fit: &[(ObservationWindow, usize)],
    holdout: &[(ObservationWindow, usize)],
    cfg: &ClassifierConfig,
    weight_decay: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrainedClassifier> {
    let mut net = PolicyNet::random(topo.clone(), cfg.output_gain, rng)?;
    let mut opt = Adam::new(net.n_params(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut grad = vec![0.0; net.n_params()];
    let mut best = (mean_loss(&net, holdout)?, net.clone(), 0usize);
    let mut epochs = 0;
    let mut converged = false;
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &k in chunk {
                let (w, y) = &fit[k];
                let c = net.forward_cached(w)?;
                let mut d = c.probs.clone();
                d[*y] -= 1.0;
                d.iter_mut().for_each(|v| *v /= chunk.len() as f64);
                net.backward(&c, &d, &mut grad);
            }
            if weight_decay > 0.0 {
                for l in net.layout() {
                    for k in l.w_offset..l.b_offset {
                        grad[k] += weight_decay * net.params()[k];
                    }
                }
            }
            opt.step(net.params_mut(), &grad);
        }
        if net.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("classifier training diverged".into()));
        }
        let loss = mean_loss(&net, holdout)?;
        if loss < best.0 * (1.0 - cfg.rel_tol) {
            best = (loss, net.clone(), epoch);
        } else if epoch - best.2 >= cfg.patience {
            converged = true;
            break;
        }
    }
    Ok(TrainedClassifier {
        net: best.1,
        holdout_loss: best.0,
        epochs,
        converged,
    })
}

/// Cross-entropy training of the streaming network on traces truncated to
/// `tau_samples`. Every `HOLDOUT_STRIDE`-th training trace of each label is held out for
/// early stopping and for picking the best run over restarts and
/// weight-decay candidates.
pub fn train_classifier(
    set: &LabeledTraceSet,
    tau_samples: usize,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    set.validate()?;
    if tau_samples > set.trace_len() {
        return Err(Error::config("discrimination.tau", "exceeds the trace duration"));
    }
    let topo = classifier_topology(tau_samples)?;
    let mut fit = Vec::new();
    let mut holdout = Vec::new();
    let mut seen = [0usize; 2];
    for t in set.train() {
        let item = (window_for(&topo, t)?, class(t.label));
        let k = &mut seen[item.1];
        *k += 1;
        if *k % HOLDOUT_STRIDE == 0 {
            holdout.push(item);
        } else {
            fit.push(item);
        }
    }
    let mut best: Option<TrainedClassifier> = None;
    for &wd in &cfg.weight_decay {
        for r in 0..cfg.restarts {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(r as u64 + 1)));
            let c = train_once(&topo, &fit, &holdout, cfg, wd, &mut rng)?;
            if best.as_ref().is_none_or(|b| c.holdout_loss < b.holdout_loss) {
                best = Some(c);
            }
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Matched filter on the first τ samples with the training-optimal threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedFilterClassifier {
    pub weights: FilterWeights,
    pub threshold: f64,
}

impl MatchedFilterClassifier {
    pub fn integrate(&self, t: &LabeledTrace) -> Result<f64> {
        let (i, q) = t.prefix(self.weights.len());
        self.weights.integrate_iq(&i, &q)
    }

    pub fn classify(&self, t: &LabeledTrace) -> Result<Level> {
        Ok(if self.integrate(t)? > self.threshold { Level::E } else { Level::G })
    }
}

/// Threshold minimizing the balanced error of labelled scores (e above).
fn best_threshold(scored: &mut [(f64, Level)]) -> f64 {
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ng = scored.iter().filter(|s| s.1 == Level::G).count() as f64;
    let ne = scored.len() as f64 - ng;
    // Threshold below everything: every g wrong, no e wrong.
    let (mut g_wrong, mut e_wrong) = (ng, 0.0);
    let mut best = (0.5 * (g_wrong / ng + e_wrong / ne), scored[0].0 - 1.0);
    for k in 0..scored.len() {
        match scored[k].1 {
            Level::G => g_wrong -= 1.0,
            _ => e_wrong += 1.0,
        }
        let err = 0.5 * (g_wrong / ng + e_wrong / ne);
        let thr = match scored.get(k + 1) {
            Some(next) => 0.5 * (scored[k].0 + next.0),
            None => scored[k].0 + 1.0,
        };
        if err < best.0 {
            best = (err, thr);
        }
    }
    best.1
}

pub fn train_matched_filter(set: &LabeledTraceSet, tau_samples: usize) -> Result<MatchedFilterClassifier> {
    set.validate()?;
    if tau_samples == 0 || tau_samples > set.trace_len() {
        return Err(Error::config("discrimination.tau", "must lie within the trace duration"));
    }
    let n = tau_samples;
    let mut sums = [vec![0.0; 2 * n], vec![0.0; 2 * n]];
    let mut counts = [0usize; 2];
    for t in set.train() {
        let c = class(t.label);
        counts[c] += 1;
        for k in 0..n {
            sums[c][k] += t.i[k] as f64;
            sums[c][n + k] += t.q[k] as f64;
        }
    }
    let mean = |c: usize| -> Vec<f64> { sums[c].iter().map(|v| v / counts[c] as f64).collect() };
    let weights = FilterWeights::from_means(&mean(0), &mean(1))?;
    let mut clf = MatchedFilterClassifier { weights, threshold: 0.0 };
    let mut scored: Vec<(f64, Level)> = set.train().map(|t| Ok((clf.integrate(t)?, t.label))).collect::<Result<_>>()?;
    clf.threshold = best_threshold(&mut scored);
    Ok(clf)
}

/// Infidelity curves over τ for both classifiers on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationCurve {
    pub tau_ns: Vec<f64>,
    pub nn: Vec<f64>,
    pub matched_filter: Vec<f64>,
    /// Standard error of the paired difference `nn − matched_filter`.
    pub diff_sigma: Vec<f64>,
    /// Matched-filter error split by cause (simulated sets only): Gaussian
    /// overlap of jump-free traces, and misassignments of traces that jumped.
    pub overlap: Vec<Option<f64>>,
    pub decay: Vec<Option<f64>>,
    pub nn_converged: Vec<bool>,
    pub n_validation: usize,
}

impl DiscriminationCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        w.write_record(["tau_ns", "nn", "matched_filter", "diff_sigma", "overlap", "decay", "nn_converged"])
            .map_err(|e| Error::parse(path, e))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for k in 0..self.tau_ns.len() {
            w.write_record([
                self.tau_ns[k].to_string(),
                self.nn[k].to_string(),
                self.matched_filter[k].to_string(),
                self.diff_sigma[k].to_string(),
                opt(self.overlap[k]),
                opt(self.decay[k]),
                self.nn_converged[k].to_string(),
            ])
            .map_err(|e| Error::parse(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Balanced infidelity `½(P(e|g) + P(g|e))` from per-class error flags.
fn balanced(wrong: &[(Level, bool)]) -> f64 {
    let rate = |l: Level| {
        let (n, w) = wrong
            .iter()
            .filter(|x| x.0 == l)
            .fold((0usize, 0usize), |(n, w), x| (n + 1, w + usize::from(x.1)));
        w as f64 / n.max(1) as f64
    };
    0.5 * (rate(Level::G) + rate(Level::E))
}

/// Overlap/decay split of the matched-filter error at duration `tau`.
fn decompose(set: &LabeledTraceSet, mf: &MatchedFilterClassifier, tau: f64) -> Result<Option<(f64, f64)>> {
    if set.validation().any(|t| t.latent_path.is_empty()) {
        return Ok(None);
    }
    let mut overlap = 0.0;
    let mut decay = 0.0;
    for l in [Level::G, Level::E] {
        let traces: Vec<&LabeledTrace> = set.validation().filter(|t| t.label == l).collect();
        let n = traces.len() as f64;
        let mut clean = Vec::new();
        let mut jumped_wrong = 0usize;
        for t in &traces {
            let u = mf.integrate(t)?;
            if t.jumped_before(tau) || t.latent_path[0].1 != l {
                let wrong = (u > mf.threshold) != (l == Level::E);
                jumped_wrong += usize::from(wrong);
            } else {
                clean.push(u);
            }
        }
        if clean.len() < 2 {
            return Ok(None);
        }
        let m = clean.iter().sum::<f64>() / clean.len() as f64;
        let s = (clean.iter().map(|u| (u - m) * (u - m)).sum::<f64>() / (clean.len() - 1) as f64).sqrt();
        let z = (mf.threshold - m) / s;
        let p_wrong = if l == Level::E { normal_cdf(z) } else { 1.0 - normal_cdf(z) };
        overlap += 0.5 * p_wrong * clean.len() as f64 / n;
        decay += 0.5 * jumped_wrong as f64 / n;
    }
    Ok(Some((overlap, decay)))
}

/// Train and score both classifiers at every τ (in samples, ascending).
pub fn discrimination_curve(
    set: &LabeledTraceSet,
    tau_grid: &[usize],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<DiscriminationCurve> {
    set.validate()?;
    if tau_grid.is_empty() || tau_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("discrimination.tau_grid", "must be non-empty and strictly ascending"));
    }
    let dt = 1.0 / set.sample_rate;
    let mut curve = DiscriminationCurve {
        tau_ns: Vec::new(),
        nn: Vec::new(),
        matched_filter: Vec::new(),
        diff_sigma: Vec::new(),
        overlap: Vec::new(),
        decay: Vec::new(),
        nn_converged: Vec::new(),
        n_validation: set.validation().count(),
    };
    for (k, &tau) in tau_grid.iter().enumerate() {
        let mf = train_matched_filter(set, tau)?;
        let nn = train_classifier(set, tau, cfg, seed.wrapping_add(k as u64))?;
        let mut wrong_nn = Vec::new();
        let mut wrong_mf = Vec::new();
        let mut d = Vec::new();
        for t in set.validation() {
            let a = nn.classify(t)? != t.label;
            let b = mf.classify(t)? != t.label;
            wrong_nn.push((t.label, a));
            wrong_mf.push((t.label, b));
            d.push(f64::from(u8::from(a)) - f64::from(u8::from(b)));
        }
        let n = d.len() as f64;
        let md = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - md) * (x - md)).sum::<f64>() / (n - 1.0);
        // Balanced errors weight each class by 1/2 over half the shots,
        // so the paired-difference standard error is that of a plain mean.
        curve.tau_ns.push(tau as f64 * 1e9 / set.sample_rate);
        curve.nn.push(balanced(&wrong_nn));
        curve.matched_filter.push(balanced(&wrong_mf));
        curve.diff_sigma.push((var / n).sqrt());
        let dec = decompose(set, &mf, tau as f64 * dt)?;
        curve.overlap.push(dec.map(|x| x.0));
        curve.decay.push(dec.map(|x| x.1));
        curve.nn_converged.push(nn.converged);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_cfg() -> EnvConfig {
        EnvConfig { t1_e: 1.0, p_therm: 0.0, ..Default::default() }
    }

    #[test]
    fn split_is_interleaved_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = simulate_labeled_set(&EnvConfig::default(), 40, 64, true, &mut rng).unwrap();
        set.validate().unwrap();
        assert_eq!(set.train().count(), 20);
        assert_eq!(set.validation().count(), 20);
        let train: Vec<*const LabeledTrace> = set.train().map(|t| t as *const _).collect();
        assert!(set.validation().all(|v| !train.contains(&(v as *const _))));
    }

    #[test]
    fn tau_must_be_multiple_of_32() {
        assert!(classifier_topology(200).is_err());
        assert_eq!(classifier_topology(1024).unwrap().boxcar_width, 32);
    }

    #[test]
    fn threshold_search_separates_separable_scores() {
        let mut s = vec![(0.1, Level::G), (0.3, Level::G), (0.7, Level::E), (0.9, Level::E)];
        let thr = best_threshold(&mut s);
        assert!(thr > 0.3 && thr < 0.7);
    }

    #[test]
    fn noiseless_traces_are_separated_by_both() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let env = Environment::new(quiet_cfg()).unwrap();
        let mut set = simulate_labeled_set(&quiet_cfg(), 200, 128, true, &mut rng).unwrap();
        for t in &mut set.traces {
            let m = env.mean_trace(t.label);
            t.i = m.i[..128].iter().map(|&v| v as f32).collect();
            t.q = m.q[..128].iter().map(|&v| v as f32).collect();
        }
        let cfg = ClassifierConfig { restarts: 1, max_epochs: 40, learning_rate: 5e-3, ..Default::default() };
        let curve = discrimination_curve(&set, &[64, 128], &cfg, 3).unwrap();
        assert!(curve.nn.iter().all(|&e| e == 0.0), "{curve:?}");
        assert!(curve.matched_filter.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set = simulate_labeled_set(&EnvConfig::default(), 8, 32, true, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("set.csv");
        set.write_csv(&p).unwrap();
        let back = LabeledTraceSet::read_csv(&p, set.sample_rate, 2).unwrap();
        for (a, b) in set.traces.iter().zip(&back.traces) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.i, b.i);
            assert_eq!(a.q, b.q);
        }
    }
}
