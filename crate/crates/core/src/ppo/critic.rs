use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value network: `n_in → width → width → 1` with tanh hidden units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub n_in: usize,
    pub width: usize,
    pub theta: Vec<f64>,
}

pub struct CriticCache {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub value: f64,
}

impl Critic {
    pub const DEFAULT_WIDTH: usize = 64;

    fn n_params_for(n_in: usize, width: usize) -> usize {
        width * n_in + width + width * width + width + width + 1
    }

    pub fn random<R: Rng + ?Sized>(n_in: usize, width: usize, rng: &mut R) -> Self {
        let mut theta = vec![0.0; Self::n_params_for(n_in, width)];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, gain: f64| {
            let std = gain / (fan_in.max(1) as f64).sqrt();
            for w in &mut theta[range] {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
        };
        let (o1, o2, o3) = Self::offsets(n_in, width);
        fill(0..o1 - width, n_in, 1.0);
        fill(o1..o2 - width, width, 1.0);
        fill(o2..o3 - 1, width, 1.0);
        Critic { n_in, width, theta }
    }

    pub fn from_params(n_in: usize, width: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != Self::n_params_for(n_in, width) {
            return Err(Error::Shape("critic parameter count mismatch".into()));
        }
        Ok(Critic { n_in, width, theta })
    }

    /// End offsets of the three (kernel, bias) blocks.
    fn offsets(n_in: usize, width: usize) -> (usize, usize, usize) {
        let o1 = width * n_in + width;
        let o2 = o1 + width * width + width;
        (o1, o2, o2 + width + 1)
    }

    fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        b.iter()
            .enumerate()
            .map(|(o, bo)| bo + w[o * x.len()..(o + 1) * x.len()].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<CriticCache> {
        if x.len() != self.n_in {
            return Err(Error::Shape(format!("critic expects {} inputs, got {}", self.n_in, x.len())));
        }
        let (n, w) = (self.n_in, self.width);
        let (o1, o2, _) = Self::offsets(n, w);
        let t = &self.theta;
        let h1: Vec<f64> = Self::dense(&t[..w * n], &t[w * n..o1], x).iter().map(|z| z.tanh()).collect();
        let h2: Vec<f64> = Self::dense(&t[o1..o1 + w * w], &t[o1 + w * w..o2], &h1)
            .iter()
            .map(|z| z.tanh())
            .collect();
        let value = Self::dense(&t[o2..o2 + w], &t[o2 + w..o2 + w + 1], &h2)[0];
        Ok(CriticCache {
            x: x.to_vec(),
            h1,
            h2,
            value,
        })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_cached(x)?.value)
    }

    /// Accumulate `dL/dζ` given `dL/dV`.
    pub fn backward(&self, c: &CriticCache, dv: f64, grad: &mut [f64]) {
        let (n, w) = (self.n_in, self.width);
        let (o1, o2, _) = Self::offsets(n, w);
        let t = &self.theta;
        for j in 0..w {
            grad[o2 + j] += dv * c.h2[j];
        }
        grad[o2 + w] += dv;
        let dz2: Vec<f64> = (0..w).map(|j| dv * t[o2 + j] * (1.0 - c.h2[j] * c.h2[j])).collect();
        for o in 0..w {
            for j in 0..w {
                grad[o1 + o * w + j] += dz2[o] * c.h1[j];
            }
            grad[o1 + w * w + o] += dz2[o];
        }
        let dz1: Vec<f64> = (0..w)
            .map(|j| (0..w).map(|o| t[o1 + o * w + j] * dz2[o]).sum::<f64>() * (1.0 - c.h1[j] * c.h1[j]))
            .collect();
        for o in 0..w {
            for j in 0..n {
                grad[o * n + j] += dz1[o] * c.x[j];
            }
            grad[w * n + o] += dz1[o];
        }
    }
}
