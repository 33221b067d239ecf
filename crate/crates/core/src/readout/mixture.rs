//! Poisson maximum-likelihood fits of Gaussian mixtures to binned counts.
//!
//! Binned counts are Poisson distributed, so instead of least squares we
//! maximize `Σ_j n_j ln λ_j − λ_j` where `λ_j` is the mixture's expected count
//! in bin j. The optimizer is Levenberg–Marquardt on the Fisher information
//! with step acceptance only on likelihood increase, so the recorded
//! likelihood sequence is monotone.

use serde::{Deserialize, Serialize};

use super::histogram::{Histogram1d, Histogram2d};
use crate::error::{Error, Result};
use crate::linalg::{normal_interval, normal_pdf, solve};

/// One weighted normal component. `amplitude` is in expected counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss1d {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
}

/// 1-D mixture. Component order is meaningful (g, e[, f]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture1d {
    pub components: Vec<Gauss1d>,
}

impl Mixture1d {
    pub fn populations(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.amplitude).sum();
        self.components.iter().map(|c| c.amplitude / total).collect()
    }

    /// Midpoint decision boundaries between adjacent means (sorted ascending).
    pub fn thresholds(&self) -> Vec<f64> {
        let mut means: Vec<f64> = self.components.iter().map(|c| c.mean).collect();
        means.sort_by(|a, b| a.total_cmp(b));
        means.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Expected counts per bin.
    pub fn bin_expectations(&self, edges: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; edges.len() - 1];
        for c in &self.components {
            for (j, w) in edges.windows(2).enumerate() {
                out[j] += c.amplitude * normal_interval((w[0] - c.mean) / c.sigma, (w[1] - c.mean) / c.sigma);
            }
        }
        out
    }

    /// Mixture density in counts per unit x.
    pub fn density(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.amplitude * normal_pdf((x - c.mean) / c.sigma) / c.sigma)
            .sum()
    }

    /// Same shape, amplitudes replaced.
    pub fn with_amplitudes(&self, amplitudes: &[f64]) -> Self {
        Mixture1d {
            components: self
                .components
                .iter()
                .zip(amplitudes)
                .map(|(c, &a)| Gauss1d { amplitude: a, ..*c })
                .collect(),
        }
    }
}

/// 2-D normal component with full covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss2d {
    pub amplitude: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Gauss2d {
    /// Normal log-density (amplitude excluded).
    pub fn log_pdf(&self, x: f64, y: f64) -> f64 {
        let [[a, b], [_, d]] = self.cov;
        let det = a * d - b * b;
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        let q = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        -0.5 * q - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln()
    }

    /// Axes `(semi-major, semi-minor, angle)` of the 1σ ellipse.
    pub fn ellipse(&self) -> (f64, f64, f64) {
        let [[a, b], [_, d]] = self.cov;
        let tr = a + d;
        let disc = ((a - d) * (a - d) / 4.0 + b * b).sqrt();
        let l1 = tr / 2.0 + disc;
        let l2 = (tr / 2.0 - disc).max(0.0);
        let angle = 0.5 * (2.0 * b).atan2(a - d);
        (l1.sqrt(), l2.sqrt(), angle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture2d {
    pub components: Vec<Gauss2d>,
}

impl Mixture2d {
    pub fn populations(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.amplitude).sum();
        self.components.iter().map(|c| c.amplitude / total).collect()
    }

    pub fn with_amplitudes(&self, amplitudes: &[f64]) -> Self {
        Mixture2d {
            components: self
                .components
                .iter()
                .zip(amplitudes)
                .map(|(c, &a)| Gauss2d { amplitude: a, ..*c })
                .collect(),
        }
    }
}

/// Fit controls. `fixed_shape` freezes means and widths and fits only the
/// amplitudes; `initial` seeds the first start (and fixes component order).
#[derive(Debug, Clone)]
pub struct FitOptions<M> {
    pub n_components: usize,
    /// Share one variance across components (1-D only).
    pub equal_variance: bool,
    pub fixed_shape: Option<M>,
    pub initial: Option<M>,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl<M> FitOptions<M> {
    pub fn new(n_components: usize) -> Self {
        FitOptions {
            n_components,
            equal_variance: false,
            fixed_shape: None,
            initial: None,
            max_iter: 500,
            rel_tol: 1e-9,
        }
    }

    pub fn fixed(shape: M, n_components: usize) -> Self {
        FitOptions {
            fixed_shape: Some(shape),
            ..Self::new(n_components)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport<M> {
    pub fit: M,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Log-likelihood after every accepted step of the winning start.
    pub trace: Vec<f64>,
}

/// Expected bin counts and their parameter Jacobian.
trait BinnedModel {
    fn n_params(&self) -> usize;
    fn expected(&self, theta: &[f64]) -> Vec<f64>;
    /// Row-major `n_params × n_bins`.
    fn jacobian(&self, theta: &[f64], expected: &[f64]) -> Vec<Vec<f64>>;
}

const LAMBDA_FLOOR: f64 = 1e-300;

fn poisson_loglik(counts: &[u64], lambda: &[f64]) -> f64 {
    counts
        .iter()
        .zip(lambda)
        .map(|(&n, &l)| {
            let l = l.max(LAMBDA_FLOOR);
            if n > 0 {
                n as f64 * l.ln() - l
            } else {
                -l
            }
        })
        .sum()
}

struct LmOutcome {
    theta: Vec<f64>,
    loglik: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn maximize<M: BinnedModel>(
    model: &M,
    counts: &[u64],
    theta0: Vec<f64>,
    max_iter: usize,
    rel_tol: f64,
) -> Result<LmOutcome> {
    let np = model.n_params();
    let mut theta = theta0;
    let mut lambda = model.expected(&theta);
    let mut loglik = poisson_loglik(counts, &lambda);
    if !loglik.is_finite() {
        return Err(Error::Numerical("non-finite likelihood at start".into()));
    }
    let mut trace = vec![loglik];
    let mut damping = 1e-3;
    for iter in 0..max_iter {
        let jac = model.jacobian(&theta, &lambda);
        let mut grad = vec![0.0; np];
        let mut fisher = vec![0.0; np * np];
        for j in 0..counts.len() {
            let l = lambda[j].max(LAMBDA_FLOOR);
            let resid = counts[j] as f64 / l - 1.0;
            for a in 0..np {
                let ja = jac[a][j];
                if ja == 0.0 {
                    continue;
                }
                grad[a] += resid * ja;
                for b in a..np {
                    fisher[a * np + b] += ja * jac[b][j] / l;
                }
            }
        }
        for a in 0..np {
            for b in 0..a {
                fisher[a * np + b] = fisher[b * np + a];
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite likelihood gradient".into()));
        }
        let scale = (0..np).map(|a| fisher[a * np + a]).fold(0.0f64, f64::max).max(1e-300);
        loop {
            let mut sys = fisher.clone();
            for a in 0..np {
                sys[a * np + a] += damping * fisher[a * np + a] + damping * 1e-9 * scale;
            }
            let step = solve(sys, grad.clone());
            if let Some(step) = step {
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
                if cand.iter().all(|v| v.is_finite()) {
                    let cand_lambda = model.expected(&cand);
                    let cand_ll = poisson_loglik(counts, &cand_lambda);
                    if cand_ll.is_finite() && cand_ll > loglik {
                        let gain = cand_ll - loglik;
                        theta = cand;
                        lambda = cand_lambda;
                        loglik = cand_ll;
                        trace.push(loglik);
                        damping = (damping / 3.0).max(1e-12);
                        if gain <= rel_tol * loglik.abs().max(1.0) {
                            return Ok(LmOutcome {
                                theta,
                                loglik,
                                iterations: iter + 1,
                                trace,
                            });
                        }
                        break;
                    }
                }
            }
            damping *= 4.0;
            if damping > 1e16 {
                // no ascent direction left at working precision
                return Ok(LmOutcome {
                    theta,
                    loglik,
                    iterations: iter + 1,
                    trace,
                });
            }
        }
    }
    Err(Error::Numerical(format!(
        "mixture fit did not converge within {max_iter} iterations"
    )))
}

// ---------------------------------------------------------------- 1-D model

struct Model1d<'a> {
    edges: &'a [f64],
    n: usize,
    equal_variance: bool,
    fixed: Option<&'a Mixture1d>,
}

impl Model1d<'_> {
    fn unpack(&self, theta: &[f64]) -> Mixture1d {
        if let Some(shape) = self.fixed {
            return shape.with_amplitudes(&theta.iter().map(|t| t.exp()).collect::<Vec<_>>());
        }
        let components = (0..self.n)
            .map(|k| {
                let (la, mu, ls) = if self.equal_variance {
                    (theta[2 * k], theta[2 * k + 1], theta[2 * self.n])
                } else {
                    (theta[3 * k], theta[3 * k + 1], theta[3 * k + 2])
                };
                Gauss1d {
                    amplitude: la.exp(),
                    mean: mu,
                    sigma: ls.exp(),
                }
            })
            .collect();
        Mixture1d { components }
    }

    fn pack(&self, m: &Mixture1d) -> Vec<f64> {
        let la = |c: &Gauss1d| c.amplitude.max(1e-6).ln();
        if self.fixed.is_some() {
            return m.components.iter().map(la).collect();
        }
        if self.equal_variance {
            let mut t: Vec<f64> = m.components.iter().flat_map(|c| [la(c), c.mean]).collect();
            let pooled = (m.components.iter().map(|c| c.sigma * c.sigma).sum::<f64>() / self.n as f64).sqrt();
            t.push(pooled.ln());
            t
        } else {
            m.components
                .iter()
                .flat_map(|c| [la(c), c.mean, c.sigma.ln()])
                .collect()
        }
    }
}

impl BinnedModel for Model1d<'_> {
    fn n_params(&self) -> usize {
        match (self.fixed, self.equal_variance) {
            (Some(_), _) => self.n,
            (None, true) => 2 * self.n + 1,
            (None, false) => 3 * self.n,
        }
    }

    fn expected(&self, theta: &[f64]) -> Vec<f64> {
        self.unpack(theta).bin_expectations(self.edges)
    }

    fn jacobian(&self, theta: &[f64], _expected: &[f64]) -> Vec<Vec<f64>> {
        let m = self.unpack(theta);
        let nb = self.edges.len() - 1;
        let mut jac = vec![vec![0.0; nb]; self.n_params()];
        for (k, c) in m.components.iter().enumerate() {
            let z: Vec<f64> = self.edges.iter().map(|e| (e - c.mean) / c.sigma).collect();
            let pdf: Vec<f64> = z.iter().map(|&v| normal_pdf(v)).collect();
            let (ia, imu, isg) = match (self.fixed, self.equal_variance) {
                (Some(_), _) => (k, usize::MAX, usize::MAX),
                (None, true) => (2 * k, 2 * k + 1, 2 * self.n),
                (None, false) => (3 * k, 3 * k + 1, 3 * k + 2),
            };
            for j in 0..nb {
                let p = normal_interval(z[j], z[j + 1]);
                jac[ia][j] = c.amplitude * p;
                if imu != usize::MAX {
                    jac[imu][j] = -c.amplitude * (pdf[j + 1] - pdf[j]) / c.sigma;
                    jac[isg][j] += -c.amplitude * (z[j + 1] * pdf[j + 1] - z[j] * pdf[j]);
                }
            }
        }
        jac
    }
}

/// Weighted 1-D k-means over bin centers; returns moment estimates per cluster.
fn kmeans_1d(centers: &[f64], counts: &[u64], seeds: &[f64]) -> Option<Mixture1d> {
    let k = seeds.len();
    let mut means = seeds.to_vec();
    let mut assign = vec![0usize; centers.len()];
    for _ in 0..100 {
        for (j, &x) in centers.iter().enumerate() {
            assign[j] = (0..k)
                .min_by(|&a, &b| (x - means[a]).abs().total_cmp(&(x - means[b]).abs()))
                .unwrap();
        }
        let mut changed = false;
        for c in 0..k {
            let (w, s) = centers
                .iter()
                .zip(counts)
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .fold((0.0, 0.0), |(w, s), ((&x, &n), _)| (w + n as f64, s + n as f64 * x));
            if w > 0.0 {
                let m = s / w;
                if (m - means[c]).abs() > 1e-12 {
                    changed = true;
                }
                means[c] = m;
            }
        }
        if !changed {
            break;
        }
    }
    let width = centers.get(1).map(|c| c - centers[0]).unwrap_or(1.0).abs();
    let components: Vec<Gauss1d> = (0..k)
        .map(|c| {
            let (w, s, s2) = centers
                .iter()
                .zip(counts)
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .fold((0.0, 0.0, 0.0), |(w, s, s2), ((&x, &n), _)| {
                    (w + n as f64, s + n as f64 * x, s2 + n as f64 * x * x)
                });
            let mean = if w > 0.0 { s / w } else { means[c] };
            let var = if w > 0.0 { (s2 / w - mean * mean).max(0.0) } else { 0.0 };
            Gauss1d {
                amplitude: w.max(1.0),
                mean,
                sigma: var.sqrt().max(width),
            }
        })
        .collect();
    Some(Mixture1d { components })
}

fn weighted_quantile(centers: &[f64], counts: &[u64], p: f64) -> f64 {
    let total: u64 = counts.iter().sum();
    let target = p * total as f64;
    let mut acc = 0.0;
    for (x, &n) in centers.iter().zip(counts) {
        acc += n as f64;
        if acc >= target {
            return *x;
        }
    }
    centers[centers.len() - 1]
}

/// Maximum-likelihood fit of an `n_components` normal mixture to binned counts.
///
/// Without `initial` the components are returned sorted by ascending mean.
pub fn fit_mixture_1d(hist: &Histogram1d, opts: &FitOptions<Mixture1d>) -> Result<FitReport<Mixture1d>> {
    hist.validate()?;
    let n = opts.n_components;
    if n == 0 {
        return Err(Error::Data("need at least one component".into()));
    }
    if hist.total() == 0 {
        return Err(Error::Data("histogram has no counts".into()));
    }
    if let Some(shape) = &opts.fixed_shape {
        if shape.components.len() != n {
            return Err(Error::Shape("fixed shape component count differs".into()));
        }
    }
    let model = Model1d {
        edges: &hist.edges,
        n,
        equal_variance: opts.equal_variance,
        fixed: opts.fixed_shape.as_ref(),
    };
    let centers = hist.centers();
    let total = hist.total() as f64;

    let mut starts: Vec<Mixture1d> = Vec::new();
    if let Some(init) = &opts.initial {
        if init.components.len() != n {
            return Err(Error::Shape("initial guess component count differs".into()));
        }
        starts.push(init.clone());
    }
    if let Some(shape) = &opts.fixed_shape {
        // nearest-mean split and an even split
        let mut amps = vec![0.0; n];
        for (x, &c) in centers.iter().zip(&hist.counts) {
            let k = (0..n)
                .min_by(|&a, &b| {
                    ((x - shape.components[a].mean) / shape.components[a].sigma)
                        .abs()
                        .total_cmp(&((x - shape.components[b].mean) / shape.components[b].sigma).abs())
                })
                .unwrap();
            amps[k] += c as f64;
        }
        starts.push(shape.with_amplitudes(&amps.iter().map(|a| a.max(1.0)).collect::<Vec<_>>()));
        starts.push(shape.with_amplitudes(&vec![total / n as f64; n]));
    } else {
        let seed_sets: Vec<Vec<f64>> = vec![
            (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect(),
            (0..n).map(|i| 0.02 + 0.96 * i as f64 / (n.max(2) - 1) as f64).collect(),
        ];
        for ps in seed_sets {
            let seeds: Vec<f64> = ps.iter().map(|&p| weighted_quantile(&centers, &hist.counts, p)).collect();
            if let Some(m) = kmeans_1d(&centers, &hist.counts, &seeds) {
                starts.push(m);
            }
        }
    }

    let mut best: Option<(LmOutcome, usize)> = None;
    let mut last_err = None;
    for (si, start) in starts.iter().enumerate() {
        match maximize(&model, &hist.counts, model.pack(start), opts.max_iter, opts.rel_tol) {
            Ok(out) => {
                if best.as_ref().is_none_or(|(b, _)| out.loglik > b.loglik) {
                    best = Some((out, si));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (out, _) = best.ok_or_else(|| last_err.unwrap_or(Error::Numerical("no start converged".into())))?;
    let mut fit = model.unpack(&out.theta);
    if fit.components.iter().any(|c| !(c.sigma > 0.0) || !c.sigma.is_finite()) {
        return Err(Error::Numerical("singular component variance".into()));
    }
    if opts.initial.is_none() && opts.fixed_shape.is_none() {
        fit.components.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    }
    Ok(FitReport {
        fit,
        log_likelihood: out.loglik,
        iterations: out.iterations,
        trace: out.trace,
    })
}

// ---------------------------------------------------------------- 2-D model

const GL_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

struct Model2d<'a> {
    hist: &'a Histogram2d,
    n: usize,
    fixed: Option<&'a Mixture2d>,
    xs: Vec<[f64; 3]>,
    ys: Vec<[f64; 3]>,
    /// Quadrature weight times bin area / 4 (uniform grid).
    area: f64,
}

impl<'a> Model2d<'a> {
    fn new(hist: &'a Histogram2d, n: usize, fixed: Option<&'a Mixture2d>) -> Self {
        let nodes = |edges: &[f64]| -> Vec<[f64; 3]> {
            edges
                .windows(2)
                .map(|w| {
                    let c = 0.5 * (w[0] + w[1]);
                    let h = 0.5 * (w[1] - w[0]);
                    [c + h * GL_NODES[0], c + h * GL_NODES[1], c + h * GL_NODES[2]]
                })
                .collect()
        };
        let dx = hist.x_edges[1] - hist.x_edges[0];
        let dy = hist.y_edges[1] - hist.y_edges[0];
        Model2d {
            hist,
            n,
            fixed,
            xs: nodes(&hist.x_edges),
            ys: nodes(&hist.y_edges),
            area: dx * dy / 4.0,
        }
    }

    fn comp_from(la: f64, mx: f64, my: f64, l11: f64, l21: f64, l22: f64) -> Gauss2d {
        let a = l11.exp();
        let d = l22.exp();
        Gauss2d {
            amplitude: la.exp(),
            mean: [mx, my],
            cov: [[a * a, a * l21], [a * l21, l21 * l21 + d * d]],
        }
    }

    fn unpack(&self, theta: &[f64]) -> Mixture2d {
        if let Some(shape) = self.fixed {
            return shape.with_amplitudes(&theta.iter().map(|t| t.exp()).collect::<Vec<_>>());
        }
        Mixture2d {
            components: (0..self.n)
                .map(|k| {
                    let t = &theta[6 * k..6 * k + 6];
                    Self::comp_from(t[0], t[1], t[2], t[3], t[4], t[5])
                })
                .collect(),
        }
    }

    fn pack(&self, m: &Mixture2d) -> Vec<f64> {
        let la = |c: &Gauss2d| c.amplitude.max(1e-6).ln();
        if self.fixed.is_some() {
            return m.components.iter().map(la).collect();
        }
        m.components
            .iter()
            .flat_map(|c| {
                let [[a, b], [_, d]] = c.cov;
                let l11 = a.sqrt();
                let l21 = b / l11;
                let l22 = (d - l21 * l21).max(1e-300).sqrt();
                [la(c), c.mean[0], c.mean[1], l11.ln(), l21, l22.ln()]
            })
            .collect()
    }

    /// Probability mass per bin of one unit-amplitude component.
    fn bin_mass(&self, c: &Gauss2d) -> Vec<f64> {
        let [[a, b], [_, d]] = c.cov;
        let det = a * d - b * b;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
        let (ia, ib, id) = (d / det, -b / det, a / det);
        let ny = self.ys.len();
        let mut out = vec![0.0; self.xs.len() * ny];
        for (ix, xn) in self.xs.iter().enumerate() {
            for (iy, yn) in self.ys.iter().enumerate() {
                let mut s = 0.0;
                for (p, &x) in xn.iter().enumerate() {
                    let dx = x - c.mean[0];
                    for (q, &y) in yn.iter().enumerate() {
                        let dy = y - c.mean[1];
                        let quad = ia * dx * dx + 2.0 * ib * dx * dy + id * dy * dy;
                        s += GL_WEIGHTS[p] * GL_WEIGHTS[q] * (-0.5 * quad).exp();
                    }
                }
                out[ix * ny + iy] = s * norm * self.area;
            }
        }
        out
    }
}

impl BinnedModel for Model2d<'_> {
    fn n_params(&self) -> usize {
        if self.fixed.is_some() {
            self.n
        } else {
            6 * self.n
        }
    }

    fn expected(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.unpack(theta);
        let mut out = vec![0.0; self.hist.counts.len()];
        for c in &m.components {
            for (o, p) in out.iter_mut().zip(self.bin_mass(c)) {
                *o += c.amplitude * p;
            }
        }
        out
    }

    fn jacobian(&self, theta: &[f64], _expected: &[f64]) -> Vec<Vec<f64>> {
        let nb = self.hist.counts.len();
        let mut jac = vec![vec![0.0; nb]; self.n_params()];
        if let Some(shape) = self.fixed {
            for (k, c) in shape.components.iter().enumerate() {
                let a = theta[k].exp();
                for (j, p) in self.bin_mass(c).into_iter().enumerate() {
                    jac[k][j] = a * p;
                }
            }
            return jac;
        }
        for k in 0..self.n {
            let t = &theta[6 * k..6 * k + 6];
            let base = Self::comp_from(t[0], t[1], t[2], t[3], t[4], t[5]);
            let mass = self.bin_mass(&base);
            for (j, p) in mass.iter().enumerate() {
                jac[6 * k][j] = base.amplitude * p;
            }
            for p in 1..6 {
                let h = 1e-6 * t[p].abs().max(1.0);
                let mut up = t.to_vec();
                let mut dn = t.to_vec();
                up[p] += h;
                dn[p] -= h;
                let cu = Self::comp_from(up[0], up[1], up[2], up[3], up[4], up[5]);
                let cd = Self::comp_from(dn[0], dn[1], dn[2], dn[3], dn[4], dn[5]);
                let mu = self.bin_mass(&cu);
                let md = self.bin_mass(&cd);
                for j in 0..nb {
                    jac[6 * k + p][j] = base.amplitude * (mu[j] - md[j]) / (2.0 * h);
                }
            }
        }
        jac
    }
}

fn kmeans_2d(points: &[(f64, f64, f64)], seeds: &[[f64; 2]]) -> Mixture2d {
    let k = seeds.len();
    let mut means = seeds.to_vec();
    let mut assign = vec![0usize; points.len()];
    let d2 = |p: &(f64, f64, f64), m: &[f64; 2]| (p.0 - m[0]).powi(2) + (p.1 - m[1]).powi(2);
    for _ in 0..100 {
        for (j, p) in points.iter().enumerate() {
            assign[j] = (0..k).min_by(|&a, &b| d2(p, &means[a]).total_cmp(&d2(p, &means[b]))).unwrap();
        }
        let mut next = means.clone();
        for (c, m) in next.iter_mut().enumerate() {
            let (w, sx, sy) = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .fold((0.0, 0.0, 0.0), |(w, sx, sy), (p, _)| (w + p.2, sx + p.2 * p.0, sy + p.2 * p.1));
            if w > 0.0 {
                *m = [sx / w, sy / w];
            }
        }
        if next == means {
            break;
        }
        means = next;
    }
    Mixture2d {
        components: (0..k)
            .map(|c| {
                let mut acc = [0.0f64; 4];
                for (p, _) in points.iter().zip(&assign).filter(|(_, &a)| a == c) {
                    let dx = p.0 - means[c][0];
                    let dy = p.1 - means[c][1];
                    acc[0] += p.2;
                    acc[1] += p.2 * dx * dx;
                    acc[2] += p.2 * dx * dy;
                    acc[3] += p.2 * dy * dy;
                }
                let w = acc[0].max(1.0);
                let floor = 1e-6;
                Gauss2d {
                    amplitude: w,
                    mean: means[c],
                    cov: [
                        [(acc[1] / w).max(floor), acc[2] / w],
                        [acc[2] / w, (acc[3] / w).max(floor)],
                    ],
                }
            })
            .collect(),
    }
}

/// Maximum-likelihood fit of a 2-D normal mixture to a binned grid.
///
/// Component order follows `initial` when given; otherwise components are
/// ordered by ascending x-mean.
pub fn fit_mixture_2d(hist: &Histogram2d, opts: &FitOptions<Mixture2d>) -> Result<FitReport<Mixture2d>> {
    hist.validate()?;
    let n = opts.n_components;
    if n == 0 || hist.total() == 0 {
        return Err(Error::Data("need components and counts".into()));
    }
    let model = Model2d::new(hist, n, opts.fixed_shape.as_ref());
    let ny = hist.ny();
    let points: Vec<(f64, f64, f64)> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(idx, &c)| {
            let (ix, iy) = (idx / ny, idx % ny);
            (
                0.5 * (hist.x_edges[ix] + hist.x_edges[ix + 1]),
                0.5 * (hist.y_edges[iy] + hist.y_edges[iy + 1]),
                c as f64,
            )
        })
        .collect();

    let mut starts: Vec<Mixture2d> = Vec::new();
    if let Some(shape) = &opts.fixed_shape {
        if shape.components.len() != n {
            return Err(Error::Shape("fixed shape component count differs".into()));
        }
        let total = hist.total() as f64;
        starts.push(shape.with_amplitudes(&vec![total / n as f64; n]));
    } else {
        if let Some(init) = &opts.initial {
            if init.components.len() != n {
                return Err(Error::Shape("initial guess component count differs".into()));
            }
            starts.push(init.clone());
            let seeds: Vec<[f64; 2]> = init.components.iter().map(|c| c.mean).collect();
            starts.push(kmeans_2d(&points, &seeds));
        } else {
            // farthest-point seeding from the heaviest bin
            let heaviest = points.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
            let mut seeds = vec![[heaviest.0, heaviest.1]];
            while seeds.len() < n {
                let far = points
                    .iter()
                    .max_by(|a, b| {
                        let da = seeds.iter().map(|s| (a.0 - s[0]).powi(2) + (a.1 - s[1]).powi(2)).fold(f64::MAX, f64::min);
                        let db = seeds.iter().map(|s| (b.0 - s[0]).powi(2) + (b.1 - s[1]).powi(2)).fold(f64::MAX, f64::min);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                seeds.push([far.0, far.1]);
            }
            starts.push(kmeans_2d(&points, &seeds));
        }
    }

    let mut best: Option<LmOutcome> = None;
    let mut last_err = None;
    for start in &starts {
        match maximize(&model, &hist.counts, model.pack(start), opts.max_iter, opts.rel_tol) {
            Ok(out) => {
                if best.as_ref().is_none_or(|b| out.loglik > b.loglik) {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let out = best.ok_or_else(|| last_err.unwrap_or(Error::Numerical("no start converged".into())))?;
    let mut fit = model.unpack(&out.theta);
    for c in &fit.components {
        let [[a, b], [_, d]] = c.cov;
        if !(a > 0.0 && a * d - b * b > 0.0) {
            return Err(Error::Numerical("singular component covariance".into()));
        }
    }
    if opts.initial.is_none() && opts.fixed_shape.is_none() {
        fit.components.sort_by(|a, b| a.mean[0].total_cmp(&b.mean[0]));
    }
    Ok(FitReport {
        fit,
        log_likelihood: out.loglik,
        iterations: out.iterations,
        trace: out.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::histogram::Binning;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sample_mixture(comps: &[(f64, f64, f64)], n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        // exact component counts keep the oracle free of multinomial noise
        for &(p, mu, sd) in comps {
            let k = (p * n as f64).round() as usize;
            let d = Normal::new(mu, sd).unwrap();
            out.extend((0..k).map(|_| d.sample(&mut rng)));
        }
        out
    }

    #[test]
    fn recovers_known_bimodal_parameters() {
        let truth = [(0.7, 0.0, 0.2), (0.3, 1.0, 0.25)];
        let xs = sample_mixture(&truth, 1_000_000, 1);
        let h = Histogram1d::from_samples(&xs, Binning::default()).unwrap();
        let rep = fit_mixture_1d(&h, &FitOptions::new(2)).unwrap();
        let pops = rep.fit.populations();
        for (k, &(p, mu, sd)) in truth.iter().enumerate() {
            let c = rep.fit.components[k];
            assert!((pops[k] - p).abs() / p < 0.01, "pop {k}: {}", pops[k]);
            assert!((c.mean - mu).abs() < 0.01 * 1.0, "mean {k}: {}", c.mean);
            assert!((c.sigma - sd).abs() / sd < 0.01, "sigma {k}: {}", c.sigma);
        }
    }

    #[test]
    fn likelihood_trace_is_monotone() {
        let xs = sample_mixture(&[(0.5, -1.0, 0.6), (0.5, 1.0, 0.6)], 50_000, 2);
        let h = Histogram1d::from_samples(&xs, Binning::default()).unwrap();
        let rep = fit_mixture_1d(&h, &FitOptions::new(2)).unwrap();
        assert!(rep.trace.len() >= 2);
        assert!(rep.trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn fixed_shape_amplitude_vanishes_without_that_state() {
        let shape = Mixture1d {
            components: vec![
                Gauss1d { amplitude: 1.0, mean: 0.0, sigma: 0.2 },
                Gauss1d { amplitude: 1.0, mean: 1.0, sigma: 0.2 },
            ],
        };
        let xs = sample_mixture(&[(1.0, 0.0, 0.2)], 100_000, 3);
        let h = Histogram1d::from_samples(&xs, Binning::default()).unwrap();
        let rep = fit_mixture_1d(&h, &FitOptions::fixed(shape, 2)).unwrap();
        let pops = rep.fit.populations();
        // zero up to Poisson noise in the overlap region
        assert!(pops[1] < 1e-3, "{pops:?}");
    }

    #[test]
    fn single_component_free_fit_is_degenerate_single_gaussian() {
        let xs = sample_mixture(&[(1.0, 0.3, 0.5)], 200_000, 4);
        let h = Histogram1d::from_samples(&xs, Binning::default()).unwrap();
        let rep = fit_mixture_1d(&h, &FitOptions::new(2)).unwrap();
        let pops = rep.fit.populations();
        let c = &rep.fit.components;
        // either one amplitude collapses or both components coincide
        let collapsed = pops.iter().any(|&p| p < 0.02);
        let coincide = (c[0].mean - c[1].mean).abs() < 0.1 && (c[0].sigma - c[1].sigma).abs() < 0.1;
        assert!(collapsed || coincide, "{:?}", rep.fit);
    }

    #[test]
    fn equal_variance_constraint_holds() {
        let xs = sample_mixture(&[(0.5, 0.0, 0.43), (0.5, 1.0, 0.43)], 200_000, 5);
        let h = Histogram1d::from_samples(&xs, Binning::default()).unwrap();
        let mut opts = FitOptions::new(2);
        opts.equal_variance = true;
        let rep = fit_mixture_1d(&h, &opts).unwrap();
        let c = &rep.fit.components;
        assert_eq!(c[0].sigma, c[1].sigma);
        assert!((c[0].sigma - 0.43).abs() < 0.01);
    }

    #[test]
    fn two_dimensional_trimodal_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = [([0.0, 0.0], 0.4), ([1.0, 0.0], 0.35), ([0.8, 0.7], 0.25)];
        let sd = 0.15;
        let n = 200_000;
        let d = Normal::new(0.0, sd).unwrap();
        let mut pts = Vec::new();
        for (m, p) in truth {
            for _ in 0..(p * n as f64) as usize {
                pts.push((m[0] + d.sample(&mut rng), m[1] + d.sample(&mut rng)));
            }
        }
        let h = Histogram2d::from_points(&pts, 48).unwrap();
        let init = Mixture2d {
            components: truth
                .iter()
                .map(|(m, _)| Gauss2d {
                    amplitude: 1.0,
                    mean: [m[0] + 0.05, m[1] - 0.05],
                    cov: [[0.03, 0.0], [0.0, 0.03]],
                })
                .collect(),
        };
        let mut opts = FitOptions::new(3);
        opts.initial = Some(init);
        let rep = fit_mixture_2d(&h, &opts).unwrap();
        let pops = rep.fit.populations();
        for (k, (m, p)) in truth.iter().enumerate() {
            assert!((pops[k] - p).abs() < 0.005, "{pops:?}");
            let c = rep.fit.components[k];
            assert!((c.mean[0] - m[0]).abs() < 0.01 && (c.mean[1] - m[1]).abs() < 0.01);
            assert!((c.cov[0][0].sqrt() - sd).abs() < 0.005);
        }
        assert!(rep.trace.windows(2).all(|w| w[1] >= w[0]));
    }
}
