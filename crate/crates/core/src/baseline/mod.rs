//! Threshold strategies and policy-map analysis.

use serde::{Deserialize, Serialize};

use crate::envsim::{Action, EpisodeView, Level};
use crate::error::{Error, Result};
use crate::readout::{classify_2d, FilterWeights, Mixture1d, Mixture2d};

/// Qutrit extension: points classified as f by the fitted 2-D mixture take
/// `f_action` instead of the 1-D rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QutritRegions {
    pub fit: Mixture2d,
    pub f_action: Action,
}

/// Terminate below `accept_threshold`, flip above `discriminate_threshold`,
/// idle in between (boundaries included in the idle band).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub accept_threshold: f64,
    pub discriminate_threshold: f64,
    pub qutrit: Option<QutritRegions>,
}

impl ThresholdPolicy {
    pub fn new(accept_threshold: f64, discriminate_threshold: f64) -> Result<Self> {
        let p = ThresholdPolicy {
            accept_threshold,
            discriminate_threshold,
            qutrit: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.accept_threshold <= self.discriminate_threshold) {
            return Err(Error::config(
                "baseline.accept_threshold",
                "must not exceed discriminate_threshold",
            ));
        }
        Ok(())
    }

    /// Decide from the integrated signal `u` (and `w` in qutrit mode).
    pub fn decide(&self, u: f64, w: Option<f64>) -> Action {
        if let (Some(q), Some(w)) = (&self.qutrit, w) {
            if classify_2d(u, w, &q.fit) == Level::F {
                return q.f_action;
            }
        }
        if u < self.accept_threshold {
            Action::Terminate
        } else if u > self.discriminate_threshold {
            Action::Flip
        } else {
            Action::Idle
        }
    }
}

/// A threshold policy wired to integration weights, usable as an episode
/// decision callback.
#[derive(Debug, Clone)]
pub struct ThresholdAgent {
    pub policy: ThresholdPolicy,
    pub u_weights: FilterWeights,
    pub w_weights: Option<FilterWeights>,
}

impl ThresholdAgent {
    pub fn decide_view(&self, view: &EpisodeView<'_>) -> Result<Action> {
        let u = self.u_weights.integrate(view.current)?;
        let w = match &self.w_weights {
            Some(ww) => Some(ww.integrate(view.current)?),
            None => None,
        };
        Ok(self.policy.decide(u, w))
    }
}

/// Thresholds centred on a fitted g/e mixture: acceptance at
/// `μ_g + accept_offset·(μ_e − μ_g)`, discrimination at the midpoint.
pub fn thresholds_from_fit(fit: &Mixture1d, accept_fraction: f64) -> Result<ThresholdPolicy> {
    if fit.components.len() < 2 {
        return Err(Error::Data("need g and e components".into()));
    }
    let (mg, me) = (fit.components[0].mean, fit.components[1].mean);
    let mid = 0.5 * (mg + me);
    let accept = mg + accept_fraction * (me - mg);
    ThresholdPolicy::new(accept.min(mid), mid)
}

/// Axis of a policy map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Axis {
    fn index(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v < self.hi) {
            return None;
        }
        Some((((v - self.lo) / (self.hi - self.lo)) * self.bins as f64) as usize).map(|k| k.min(self.bins - 1))
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..self.bins).map(|k| self.lo + (k as f64 + 0.5) * w).collect()
    }

    /// 41 bins over ±4σ around the outermost fitted means.
    pub fn around_fit(fit: &Mixture1d) -> Self {
        let lo = fit.components.iter().map(|c| c.mean - 4.0 * c.sigma).fold(f64::INFINITY, f64::min);
        let hi = fit.components.iter().map(|c| c.mean + 4.0 * c.sigma).fold(f64::NEG_INFINITY, f64::max);
        Axis { lo, hi, bins: 41 }
    }
}

/// One probe: coordinates on the map axes and the policy's action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySample {
    pub coords: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Overlay of a fitted component: mean and 1σ ellipse (semi-axes, angle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub mean: Vec<f64>,
    pub semi_axes: [f64; 2],
    pub angle: f64,
}

/// Binned mean action probabilities. Cells are row-major over the axes;
/// `None` marks empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMap {
    pub axes: Vec<Axis>,
    pub n_actions: usize,
    pub counts: Vec<usize>,
    pub probs: Vec<Option<Vec<f64>>>,
    pub overlays: Vec<Overlay>,
}

impl PolicyMap {
    pub fn cell(&self, idx: &[usize]) -> (usize, Option<&Vec<f64>>) {
        let mut flat = 0;
        for (a, &i) in self.axes.iter().zip(idx) {
            flat = flat * a.bins + i;
        }
        (self.counts[flat], self.probs[flat].as_ref())
    }
}

pub fn build_policy_map(samples: &[PolicySample], axes: &[Axis], overlays: Vec<Overlay>) -> Result<PolicyMap> {
    if samples.is_empty() {
        return Err(Error::Data("empty probe set".into()));
    }
    if axes.is_empty() || axes.iter().any(|a| a.bins == 0 || !(a.hi > a.lo)) {
        return Err(Error::config("map.axes", "axes need bins > 0 and hi > lo"));
    }
    let n_actions = samples[0].probs.len();
    let n_cells: usize = axes.iter().map(|a| a.bins).product();
    let mut counts = vec![0usize; n_cells];
    let mut sums = vec![vec![0.0; n_actions]; n_cells];
    for s in samples {
        if s.coords.len() != axes.len() || s.probs.len() != n_actions {
            return Err(Error::Shape("probe sample does not match the map axes".into()));
        }
        let mut flat = 0;
        let mut inside = true;
        for (a, &v) in axes.iter().zip(&s.coords) {
            match a.index(v) {
                Some(i) => flat = flat * a.bins + i,
                None => inside = false,
            }
        }
        if !inside {
            continue;
        }
        counts[flat] += 1;
        for (acc, p) in sums[flat].iter_mut().zip(&s.probs) {
            *acc += p;
        }
    }
    let probs = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            (c > 0).then(|| {
                let total: f64 = s.iter().sum();
                s.iter().map(|v| v / total).collect()
            })
        })
        .collect();
    Ok(PolicyMap {
        axes: axes.to_vec(),
        n_actions,
        counts,
        probs,
        overlays,
    })
}

pub fn overlays_1d(fit: &Mixture1d) -> Vec<Overlay> {
    fit.components
        .iter()
        .map(|c| Overlay {
            mean: vec![c.mean],
            semi_axes: [c.sigma, 0.0],
            angle: 0.0,
        })
        .collect()
}

pub fn overlays_2d(fit: &Mixture2d) -> Vec<Overlay> {
    fit.components
        .iter()
        .map(|c| {
            let (a, b, angle) = c.ellipse();
            Overlay {
                mean: c.mean.to_vec(),
                semi_axes: [a, b],
                angle,
            }
        })
        .collect()
}

/// One point of an error/cycle-count trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub mean_cycles: f64,
    pub error: f64,
}

/// Lower-left envelope: points sorted by ⟨n⟩ keeping only strict error
/// improvements.
pub fn pareto_front(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.mean_cycles.total_cmp(&b.mean_cycles).then(a.error.total_cmp(&b.error)));
    let mut out: Vec<FrontierPoint> = Vec::new();
    for p in sorted {
        if out.last().is_none_or(|l| p.error < l.error) {
            out.push(p);
        }
    }
    out
}

/// Error of the front at `mean_cycles`: best error reachable with at most
/// that many cycles, linearly interpolated between front points.
pub fn front_error_at(front: &[FrontierPoint], mean_cycles: f64) -> Option<f64> {
    let first = front.first()?;
    if mean_cycles < first.mean_cycles {
        return None;
    }
    for w in front.windows(2) {
        if mean_cycles <= w[1].mean_cycles {
            let t = (mean_cycles - w[0].mean_cycles) / (w[1].mean_cycles - w[0].mean_cycles);
            return Some(w[0].error + t * (w[1].error - w[0].error));
        }
    }
    front.last().map(|p| p.error)
}

/// ⟨n⟩ the front needs to reach `error`, interpolated; `None` if never reached.
pub fn front_cycles_at(front: &[FrontierPoint], error: f64) -> Option<f64> {
    let first = front.first()?;
    if error >= first.error {
        return Some(first.mean_cycles);
    }
    for w in front.windows(2) {
        if error >= w[1].error {
            let t = (w[0].error - error) / (w[0].error - w[1].error);
            return Some(w[0].mean_cycles + t * (w[1].mean_cycles - w[0].mean_cycles));
        }
    }
    None
}
