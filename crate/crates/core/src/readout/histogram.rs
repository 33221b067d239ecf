use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binning rule for 1-D histograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Binning {
    /// Freedman–Diaconis width over the sample range, at least `min_bins`.
    FreedmanDiaconis { min_bins: usize },
    /// Equal-width bins over `[lo, hi)`; samples outside are dropped.
    Fixed { lo: f64, hi: f64, bins: usize },
}

impl Default for Binning {
    fn default() -> Self {
        Binning::FreedmanDiaconis { min_bins: 64 }
    }
}

const MAX_BINS: usize = 4096;

/// Binned counts over sorted edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram1d {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram1d {
    pub fn from_samples(samples: &[f64], binning: Binning) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("cannot histogram an empty sample".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite sample".into()));
        }
        let (lo, hi, bins) = match binning {
            Binning::Fixed { lo, hi, bins } => {
                if !(hi > lo) || bins == 0 {
                    return Err(Error::Data(format!("bad fixed binning [{lo}, {hi}) x {bins}")));
                }
                (lo, hi, bins)
            }
            Binning::FreedmanDiaconis { min_bins } => {
                let mut sorted = samples.to_vec();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let n = sorted.len();
                let lo = sorted[0];
                let hi = sorted[n - 1];
                let q = |p: f64| sorted[((n - 1) as f64 * p).round() as usize];
                let iqr = q(0.75) - q(0.25);
                let range = hi - lo;
                let bins = if iqr > 0.0 && range > 0.0 {
                    let width = 2.0 * iqr / (n as f64).cbrt();
                    ((range / width).ceil() as usize).clamp(min_bins.max(1), MAX_BINS)
                } else {
                    min_bins.max(1)
                };
                let pad = if range > 0.0 { range * 1e-9 } else { 0.5 };
                (lo - pad, hi + pad, bins)
            }
        };
        let mut hist = Histogram1d::empty(lo, hi, bins);
        for &s in samples {
            hist.add(s);
        }
        Ok(hist)
    }

    pub fn empty(lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        Histogram1d {
            edges: (0..=bins).map(|k| lo + k as f64 * width).collect(),
            counts: vec![0; bins],
        }
    }

    /// Add one sample if it falls inside the range.
    pub fn add(&mut self, x: f64) {
        let lo = self.edges[0];
        let hi = self.edges[self.edges.len() - 1];
        if !(x >= lo && x < hi) {
            return;
        }
        let bins = self.counts.len();
        let mut k = ((x - lo) / (hi - lo) * bins as f64) as usize;
        k = k.min(bins - 1);
        // equal widths, but guard against rounding at the edges
        while k > 0 && x < self.edges[k] {
            k -= 1;
        }
        while k + 1 < bins && x >= self.edges[k + 1] {
            k += 1;
        }
        self.counts[k] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != self.counts.len() + 1 {
            return Err(Error::Shape(format!(
                "{} edges for {} bins",
                self.edges.len(),
                self.counts.len()
            )));
        }
        if self.edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("histogram edges must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Counts over a rectangular grid, row-major in x: `counts[ix * ny + iy]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram2d {
    pub fn empty(x: (f64, f64, usize), y: (f64, f64, usize)) -> Self {
        let edges = |(lo, hi, n): (f64, f64, usize)| -> Vec<f64> {
            (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
        };
        Histogram2d {
            x_edges: edges(x),
            y_edges: edges(y),
            counts: vec![0; x.2 * y.2],
        }
    }

    /// Square-ish grid covering all points with `bins` per axis.
    pub fn from_points(points: &[(f64, f64)], bins: usize) -> Result<Self> {
        if points.is_empty() || bins == 0 {
            return Err(Error::Data("cannot histogram an empty sample".into()));
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Data("non-finite sample".into()));
            }
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let px = ((x1 - x0) * 1e-9).max(1e-12);
        let py = ((y1 - y0) * 1e-9).max(1e-12);
        let mut h = Histogram2d::empty((x0 - px, x1 + px, bins), (y0 - py, y1 + py, bins));
        for &(x, y) in points {
            h.add(x, y);
        }
        Ok(h)
    }

    pub fn nx(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn add(&mut self, x: f64, y: f64) {
        let find = |edges: &[f64], v: f64| -> Option<usize> {
            let n = edges.len() - 1;
            if !(v >= edges[0] && v < edges[n]) {
                return None;
            }
            let mut k = (((v - edges[0]) / (edges[n] - edges[0])) * n as f64) as usize;
            k = k.min(n - 1);
            while k > 0 && v < edges[k] {
                k -= 1;
            }
            while k + 1 < n && v >= edges[k + 1] {
                k += 1;
            }
            Some(k)
        };
        if let (Some(ix), Some(iy)) = (find(&self.x_edges, x), find(&self.y_edges, y)) {
            let ny = self.ny();
            self.counts[ix * ny + iy] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_edges.len() < 2 || self.y_edges.len() < 2 || self.counts.len() != self.nx() * self.ny() {
            return Err(Error::Shape("2-D histogram counts do not match grid".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freedman_diaconis_respects_minimum() {
        let samples: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let h = Histogram1d::from_samples(&samples, Binning::default()).unwrap();
        assert!(h.counts.len() >= 64);
        assert_eq!(h.total(), 100);
        h.validate().unwrap();
    }

    #[test]
    fn fixed_binning_drops_out_of_range() {
        let h = Histogram1d::from_samples(
            &[-1.0, 0.0, 0.5, 0.99, 1.0],
            Binning::Fixed { lo: 0.0, hi: 1.0, bins: 2 },
        )
        .unwrap();
        assert_eq!(h.counts, vec![1, 2]);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(Histogram1d::from_samples(&[], Binning::default()).is_err());
    }

    #[test]
    fn grid_counts_points() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (0.1, 0.9)];
        let h = Histogram2d::from_points(&pts, 4).unwrap();
        assert_eq!(h.total(), 3);
        h.validate().unwrap();
    }
}
