//! Readout post-processing: matched-filter integration, thresholds, and
//! Gaussian-mixture population extraction.
//!
//! Integrated signals are normalized so that the g and e means are one unit
//! apart, with U increasing toward e.

mod histogram;
mod mixture;

pub use histogram::{Binning, Histogram1d, Histogram2d};
pub use mixture::{
    fit_mixture_1d, fit_mixture_2d, FitOptions, FitReport, Gauss1d, Gauss2d, Mixture1d, Mixture2d,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{EnvState, Environment, IqTrace, Level, Strength, Trace};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Which integration axis a weight vector produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightLabel {
    /// g–e axis.
    U,
    /// Orthogonal axis separating f in the qutrit plane.
    W,
}

/// Unit-norm integration weights over the concatenated `[I..., Q...]` samples.
/// `integrate` returns `w·s / normalization`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterWeights {
    pub label: WeightLabel,
    pub w: Vec<f64>,
    pub normalization: f64,
}

fn mean_vec<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Data("empty trace set".into()));
    }
    let mut acc: Vec<f64> = Vec::new();
    for row in rows {
        if acc.is_empty() {
            acc = vec![0.0; row.len()];
        } else if row.len() != acc.len() {
            return Err(Error::Shape(format!(
                "trace length {} differs from {}",
                row.len() / 2,
                acc.len() / 2
            )));
        }
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// Concatenated `[I..., Q...]` samples of a trace.
pub fn concat(trace: &Trace) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * trace.len());
    v.extend_from_slice(&trace.i_samples);
    v.extend_from_slice(&trace.q_samples);
    v
}

impl FilterWeights {
    /// Matched filter from two mean vectors (concatenated quadratures).
    pub fn from_means(mean_g: &[f64], mean_e: &[f64]) -> Result<Self> {
        if mean_g.len() != mean_e.len() {
            return Err(Error::Shape(format!(
                "mean lengths differ: {} vs {}",
                mean_g.len(),
                mean_e.len()
            )));
        }
        let diff: Vec<f64> = mean_e.iter().zip(mean_g).map(|(e, g)| e - g).collect();
        let scale = norm(mean_g).max(norm(mean_e));
        let n = norm(&diff);
        if !(n > 1e-12 * scale) || !n.is_finite() {
            return Err(Error::Data("degenerate weights: g and e means coincide".into()));
        }
        let w: Vec<f64> = diff.iter().map(|d| d / n).collect();
        let normalization = dot(&w, &diff);
        Ok(FilterWeights {
            label: WeightLabel::U,
            w,
            normalization,
        })
    }

    pub fn from_mean_traces(g: &IqTrace, e: &IqTrace) -> Result<Self> {
        Self::from_means(&g.concat(), &e.concat())
    }

    /// Keep only the first `n` samples of each quadrature and renormalize
    /// so the g/e separation stays one unit.
    pub fn truncated(&self, n: usize, mean_g: &[f64], mean_e: &[f64]) -> Result<Self> {
        let len = self.w.len() / 2;
        if n == 0 || n > len {
            return Err(Error::Shape(format!("cannot truncate {len} samples to {n}")));
        }
        let cut = |v: &[f64]| -> Vec<f64> { v[..n].iter().chain(&v[len..len + n]).copied().collect() };
        Self::from_means(&cut(mean_g), &cut(mean_e))
    }

    pub fn len(&self) -> usize {
        self.w.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Integrate concatenated samples.
    pub fn integrate_slice(&self, s: &[f64]) -> Result<f64> {
        if s.len() != self.w.len() {
            return Err(Error::Shape(format!(
                "trace has {} values, weights expect {}",
                s.len(),
                self.w.len()
            )));
        }
        Ok(dot(&self.w, s) / self.normalization)
    }

    /// Integrate an I/Q pair of equal-length sample sequences.
    pub fn integrate_iq(&self, i: &[f64], q: &[f64]) -> Result<f64> {
        let n = self.len();
        if i.len() != n || q.len() != n {
            return Err(Error::Shape(format!(
                "trace has {}/{} samples, weights expect {n}",
                i.len(),
                q.len()
            )));
        }
        let s = dot(&self.w[..n], i) + dot(&self.w[n..], q);
        Ok(s / self.normalization)
    }

    pub fn integrate(&self, trace: &Trace) -> Result<f64> {
        self.integrate_iq(&trace.i_samples, &trace.q_samples)
    }
}

/// Matched filter from prepared g and e ensembles: `w ∝ ⟨s_e⟩ − ⟨s_g⟩`.
pub fn estimate_weights(traces_g: &[Trace], traces_e: &[Trace]) -> Result<FilterWeights> {
    let cg: Vec<Vec<f64>> = traces_g.iter().map(concat).collect();
    let ce: Vec<Vec<f64>> = traces_e.iter().map(concat).collect();
    let mg = mean_vec(cg.iter().map(|v| v.as_slice()))?;
    let me = mean_vec(ce.iter().map(|v| v.as_slice()))?;
    FilterWeights::from_means(&mg, &me)
}

/// Orthonormal `(U, W)` weight pair for qutrit readout. U is the g–e matched
/// filter; W is the unit direction of `⟨s_f⟩ − (⟨s_g⟩+⟨s_e⟩)/2` orthogonal to
/// U. Both share U's normalization so the (U, W) plane is isotropic.
pub fn qutrit_weights_from_means(g: &[f64], e: &[f64], f: &[f64]) -> Result<(FilterWeights, FilterWeights)> {
    if f.len() != g.len() {
        return Err(Error::Shape("f mean length differs".into()));
    }
    let u = FilterWeights::from_means(g, e)?;
    let mut d: Vec<f64> = f.iter().zip(g.iter().zip(e)).map(|(f, (g, e))| f - 0.5 * (g + e)).collect();
    let proj = dot(&d, &u.w);
    d.iter_mut().zip(&u.w).for_each(|(x, w)| *x -= proj * w);
    let n = norm(&d);
    if !(n > 1e-12 * norm(f).max(1e-300)) {
        return Err(Error::Data("degenerate weights: f mean lies on the g–e axis".into()));
    }
    let w = FilterWeights {
        label: WeightLabel::W,
        w: d.iter().map(|x| x / n).collect(),
        normalization: u.normalization,
    };
    Ok((u, w))
}

pub fn estimate_qutrit_weights(
    traces_g: &[Trace],
    traces_e: &[Trace],
    traces_f: &[Trace],
) -> Result<(FilterWeights, FilterWeights)> {
    let mean = |ts: &[Trace]| -> Result<Vec<f64>> {
        let c: Vec<Vec<f64>> = ts.iter().map(concat).collect();
        mean_vec(c.iter().map(|v| v.as_slice()))
    };
    qutrit_weights_from_means(&mean(traces_g)?, &mean(traces_e)?, &mean(traces_f)?)
}

/// Midpoint thresholding against a fitted 1-D mixture. Components are in
/// level order (g, e[, f]); `u` is assigned to the component whose mean is
/// nearest, with exact ties going to the component with the larger mean.
pub fn classify_1d(u: f64, fit: &Mixture1d) -> Level {
    let mut order: Vec<usize> = (0..fit.components.len()).collect();
    order.sort_by(|&a, &b| fit.components[a].mean.total_cmp(&fit.components[b].mean));
    let mut chosen = order[0];
    for pair in order.windows(2) {
        let t = 0.5 * (fit.components[pair[0]].mean + fit.components[pair[1]].mean);
        if u >= t {
            chosen = pair[1];
        }
    }
    Level::from_index(chosen).expect("at most three components")
}

/// Maximum-likelihood region of the fitted 2-D components (amplitudes ignored).
pub fn classify_2d(u: f64, w: f64, fit: &Mixture2d) -> Level {
    let best = fit
        .components
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.log_pdf(u, w).total_cmp(&b.1.log_pdf(u, w)))
        .map(|(k, _)| k)
        .expect("non-empty mixture");
    Level::from_index(best).expect("at most three components")
}

/// Row-normalized assignment matrix `P(assigned | prepared)` over `n_levels`.
pub fn assignment_matrix(pairs: &[(Level, Level)], n_levels: usize) -> Result<Vec<Vec<f64>>> {
    let mut counts = vec![vec![0usize; n_levels]; n_levels];
    for &(prep, got) in pairs {
        if prep.index() >= n_levels || got.index() >= n_levels {
            return Err(Error::Data(format!("level out of range for {n_levels}-level readout")));
        }
        counts[prep.index()][got.index()] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                return Err(Error::Data(format!("no shots prepared in level {k}")));
            }
            Ok(row.iter().map(|&c| c as f64 / n as f64).collect())
        })
        .collect()
}

/// `½(P(g|e) + P(e|g))` for two levels, `1 − mean diagonal` for three.
/// Pairs are `(prepared, assigned)`.
pub fn readout_infidelity(pairs: &[(Level, Level)], n_levels: usize) -> Result<f64> {
    let m = assignment_matrix(pairs, n_levels)?;
    let diag: f64 = (0..n_levels).map(|k| m[k][k]).sum();
    Ok(1.0 - diag / n_levels as f64)
}

/// Populations from a fixed-shape amplitude fit of integrated samples.
pub fn extract_populations(us: &[f64], shape: &Mixture1d) -> Result<Vec<f64>> {
    let hist = Histogram1d::from_samples(us, Binning::default())?;
    let rep = fit_mixture_1d(&hist, &FitOptions::fixed(shape.clone(), shape.components.len()))?;
    Ok(rep.fit.populations())
}

/// Fit-and-threshold infidelity of heralded preparations: weights from the
/// prepared ensembles, a mixture fit of the pooled integrated signals, then
/// assignment by [`classify_1d`] (two levels) or [`classify_2d`] (three).
pub fn heralded_infidelity<R: Rng + ?Sized>(
    env: &Environment,
    strength: Strength,
    shots: usize,
    rng: &mut R,
) -> Result<f64> {
    if shots == 0 {
        return Err(Error::Data("no shots".into()));
    }
    let levels: &[Level] = if env.config().levels == 3 { &[Level::G, Level::E, Level::F] } else { &[Level::G, Level::E] };
    let ensembles: Vec<Vec<Trace>> = levels
        .iter()
        .map(|&l| (0..shots).map(|_| env.measure(EnvState::new(l), strength, rng).0).collect())
        .collect();
    let mut pairs = Vec::with_capacity(levels.len() * shots);
    if levels.len() == 2 {
        let w = estimate_weights(&ensembles[0], &ensembles[1])?;
        let us: Vec<Vec<f64>> = ensembles
            .iter()
            .map(|ens| ens.iter().map(|t| w.integrate(t)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let pooled: Vec<f64> = us.concat();
        let mut opts = FitOptions::new(2);
        opts.equal_variance = strength == Strength::Weak;
        let fit = fit_mixture_1d(&Histogram1d::from_samples(&pooled, Binning::default())?, &opts)?.fit;
        for (k, row) in us.iter().enumerate() {
            pairs.extend(row.iter().map(|&u| (levels[k], classify_1d(u, &fit))));
        }
    } else {
        let (wu, ww) = estimate_qutrit_weights(&ensembles[0], &ensembles[1], &ensembles[2])?;
        let mut points = Vec::with_capacity(3 * shots);
        let mut initial = Vec::new();
        for ens in &ensembles {
            let pts: Vec<(f64, f64)> =
                ens.iter().map(|t| Ok((wu.integrate(t)?, ww.integrate(t)?))).collect::<Result<_>>()?;
            let n = pts.len() as f64;
            let mean = [pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n];
            initial.push(Gauss2d { amplitude: n, mean, cov: [[0.05, 0.0], [0.0, 0.05]] });
            points.push(pts);
        }
        let pooled: Vec<(f64, f64)> = points.concat();
        let mut opts = FitOptions::new(3);
        opts.initial = Some(Mixture2d { components: initial });
        let fit = fit_mixture_2d(&Histogram2d::from_points(&pooled, 64)?, &opts)?.fit;
        for (k, pts) in points.iter().enumerate() {
            pairs.extend(pts.iter().map(|&(u, w)| (levels[k], classify_2d(u, w, &fit))));
        }
    }
    readout_infidelity(&pairs, levels.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{EnvConfig, EnvState, Environment, Strength};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trace(i: Vec<f64>, q: Vec<f64>) -> Trace {
        Trace {
            i_samples: i,
            q_samples: q,
            latent_path: vec![(0.0, Level::G)],
        }
    }

    #[test]
    fn identical_means_are_degenerate() {
        let t = trace(vec![1.0; 4], vec![0.5; 4]);
        let err = estimate_weights(&[t.clone()], &[t]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = trace(vec![1.0; 4], vec![0.0; 4]);
        let b = trace(vec![1.0; 5], vec![0.0; 5]);
        assert!(matches!(estimate_weights(&[a.clone(), b], &[a]), Err(Error::Shape(_))));
    }

    #[test]
    fn noiseless_weights_follow_mean_difference() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = EnvConfig { p_therm: 0.0, t1_e: 1.0, ..Default::default() };
        let quiet = Environment::new(cfg).unwrap();
        let tg = quiet.measure_with_noise(EnvState::new(Level::G), 0.0, &mut rng).0;
        let te = quiet.measure_with_noise(EnvState::new(Level::E), 0.0, &mut rng).0;
        let w = estimate_weights(&[tg.clone()], &[te.clone()]).unwrap();
        let diff: Vec<f64> = env
            .mean_traces()
            .e
            .concat()
            .iter()
            .zip(env.mean_traces().g.concat())
            .map(|(e, g)| e - g)
            .collect();
        let n = norm(&diff);
        for (a, d) in w.w.iter().zip(&diff) {
            assert!((a - d / n).abs() < 1e-12);
        }
        // unit separation, increasing toward e
        let ug = w.integrate(&tg).unwrap();
        let ue = w.integrate(&te).unwrap();
        assert!((ue - ug - 1.0).abs() < 1e-12);
        let zero = trace(vec![0.0; 256], vec![0.0; 256]);
        assert_eq!(w.integrate(&zero).unwrap(), 0.0);
    }

    #[test]
    fn qutrit_weights_are_orthonormal() {
        let env = Environment::new(EnvConfig::qutrit()).unwrap();
        let m = env.mean_traces();
        let (u, w) =
            qutrit_weights_from_means(&m.g.concat(), &m.e.concat(), &m.f.as_ref().unwrap().concat()).unwrap();
        assert!((norm(&u.w) - 1.0).abs() < 1e-12);
        assert!((norm(&w.w) - 1.0).abs() < 1e-12);
        assert!(dot(&u.w, &w.w).abs() < 1e-12);
    }

    #[test]
    fn classify_1d_boundaries() {
        let fit = Mixture1d {
            components: vec![
                Gauss1d { amplitude: 1.0, mean: 0.0, sigma: 0.2 },
                Gauss1d { amplitude: 1.0, mean: 1.0, sigma: 0.2 },
            ],
        };
        assert_eq!(classify_1d(0.0, &fit), Level::G);
        assert_eq!(classify_1d(0.5, &fit), Level::E);
        assert_eq!(classify_1d(0.4999, &fit), Level::G);
        assert_eq!(classify_1d(3.0, &fit), Level::E);
    }

    #[test]
    fn infidelity_conventions() {
        use Level::*;
        assert_eq!(readout_infidelity(&[(G, G), (E, E)], 2).unwrap(), 0.0);
        let pairs = [(G, G), (G, E), (E, E), (E, E)];
        assert!((readout_infidelity(&pairs, 2).unwrap() - 0.25).abs() < 1e-15);
        let pairs = [(G, G), (E, E), (F, E), (F, F)];
        assert!((readout_infidelity(&pairs, 3).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(readout_infidelity(&[(G, G)], 2).is_err());
    }

    #[test]
    fn strong_noise_calibration_reproduces_snr() {
        let cfg = EnvConfig { p_therm: 0.0, t1_e: 1e3, ..Default::default() };
        let env = Environment::new(cfg).unwrap();
        let w = FilterWeights::from_mean_traces(&env.mean_traces().g, &env.mean_traces().e).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut stats = |l: Level| {
            let us: Vec<f64> = (0..n)
                .map(|_| w.integrate(&env.measure(EnvState::new(l), Strength::Strong, &mut rng).0).unwrap())
                .collect();
            let m = us.iter().sum::<f64>() / n as f64;
            let v = us.iter().map(|u| (u - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (m, v.sqrt())
        };
        let (mg, sg) = stats(Level::G);
        let (me, se) = stats(Level::E);
        let snr = (me - mg) / (0.5 * (sg + se));
        assert!((snr / env.config().snr - 1.0).abs() < 0.02, "{snr}");
    }

    proptest! {
        #[test]
        fn integrate_is_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            s1 in prop::collection::vec(-2.0f64..2.0, 16),
            s2 in prop::collection::vec(-2.0f64..2.0, 16),
        ) {
            let g: Vec<f64> = (0..16).map(|k| (k as f64).sin()).collect();
            let e: Vec<f64> = (0..16).map(|k| (k as f64).cos()).collect();
            let w = FilterWeights::from_means(&g, &e).unwrap();
            let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
            let lhs = w.integrate_slice(&mix).unwrap();
            let rhs = a * w.integrate_slice(&s1).unwrap() + b * w.integrate_slice(&s2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn classify_is_scale_invariant(
            u in -3.0f64..4.0,
            w in -3.0f64..3.0,
            scale in 0.01f64..100.0,
            mg in -1.0f64..0.0,
            me in 0.1f64..2.0,
        ) {
            let fit = Mixture1d { components: vec![
                Gauss1d { amplitude: 3.0, mean: mg, sigma: 0.3 },
                Gauss1d { amplitude: 1.0, mean: me, sigma: 0.5 },
            ]};
            let scaled = Mixture1d { components: fit.components.iter().map(|c| Gauss1d {
                amplitude: c.amplitude * scale, mean: c.mean * scale, sigma: c.sigma * scale,
            }).collect() };
            prop_assert_eq!(classify_1d(u, &fit), classify_1d(u * scale, &scaled));

            let comps = [([mg, 0.0], 0.1), ([me, 0.0], 0.2), ([0.5 * (mg + me), 1.0], 0.15)];
            let fit2 = Mixture2d { components: comps.iter().map(|&(m, v)| Gauss2d {
                amplitude: 1.0, mean: m, cov: [[v, 0.01], [0.01, v]],
            }).collect() };
            let s2 = scale * scale;
            let scaled2 = Mixture2d { components: fit2.components.iter().map(|c| Gauss2d {
                amplitude: c.amplitude,
                mean: [c.mean[0] * scale, c.mean[1] * scale],
                cov: [[c.cov[0][0] * s2, c.cov[0][1] * s2], [c.cov[1][0] * s2, c.cov[1][1] * s2]],
            }).collect() };
            prop_assert_eq!(classify_2d(u, w, &fit2), classify_2d(u * scale, w * scale, &scaled2));
        }
    }
}
