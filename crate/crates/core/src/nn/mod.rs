//! Streaming feedforward policy network.
//!
//! The network mirrors a pipelined FPGA design: a small preprocessing network
//! digests the `l` previous cycles, then a chain of dense layers runs while
//! the current readout is still arriving. Every streaming layer sees the
//! previous layer's outputs concatenated with the next block of freshly
//! boxcar-filtered I/Q samples, so only the final layer adds loop latency.
//!
//! Layer input ordering is `[previous outputs, I block, Q block]`. The
//! parameter vector θ stores, layer by layer (preprocessing first), a
//! row-major `out × in` kernel followed by the bias.

mod boxcar;
mod checkpoint;
mod latency;
mod quantize;
mod sampling;
mod window;

pub use boxcar::boxcar;
pub use checkpoint::{PolicyCheckpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use latency::{dense_layer_ns, latency_report, LatencyLedger, LayerTiming, LoopConstants};
pub use quantize::{QuantScheme, QuantizedParams};
pub use sampling::{sample_action, sample_index};
pub use window::ObservationWindow;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape and input schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetTopology {
    pub n_hidden_layers: usize,
    pub hidden_width: usize,
    /// Fresh downsampled values per streaming layer, half I and half Q.
    pub inputs_per_layer: usize,
    pub preproc_layers: usize,
    pub preproc_width: usize,
    /// Number of previous cycles fed to the preprocessing network.
    pub memory_depth: usize,
    /// Output width: actions for a policy, classes for a classifier.
    pub n_actions: usize,
    /// Boxcar width for the current readout.
    pub boxcar_width: usize,
    /// Boxcar width for remembered readouts.
    pub memory_boxcar_width: usize,
    /// Raw samples per quadrature in one readout.
    pub readout_len: usize,
}

impl Default for NetTopology {
    fn default() -> Self {
        NetTopology {
            n_hidden_layers: 7,
            hidden_width: 12,
            inputs_per_layer: 8,
            preproc_layers: 2,
            preproc_width: 12,
            memory_depth: 0,
            n_actions: 3,
            boxcar_width: 8,
            memory_boxcar_width: 32,
            readout_len: 256,
        }
    }
}

impl NetTopology {
    pub fn with_memory(memory_depth: usize, n_actions: usize) -> Self {
        NetTopology {
            memory_depth,
            n_actions,
            ..Default::default()
        }
    }

    /// Input size N of a streaming hidden layer.
    pub fn layer_input_size(&self) -> usize {
        self.hidden_width + self.inputs_per_layer
    }

    pub fn n_stream_layers(&self) -> usize {
        self.n_hidden_layers + 1
    }

    /// Downsampled values per quadrature of the current readout.
    pub fn n_downsampled(&self) -> usize {
        self.readout_len / self.boxcar_width
    }

    /// Length of the fresh part of the window (`[I..., Q...]`).
    pub fn fresh_len(&self) -> usize {
        2 * self.n_downsampled()
    }

    /// Features per remembered cycle: downsampled I and Q plus a one-hot action.
    pub fn memory_features_per_cycle(&self) -> usize {
        2 * (self.readout_len / self.memory_boxcar_width) + self.n_actions
    }

    pub fn memory_len(&self) -> usize {
        self.memory_depth * self.memory_features_per_cycle()
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        let p = |f: &str| format!("{prefix}{f}");
        let nonzero = |v: usize, f: &str| -> Result<()> {
            if v == 0 {
                Err(Error::config(p(f), "must be > 0"))
            } else {
                Ok(())
            }
        };
        nonzero(self.hidden_width, "hidden_width")?;
        nonzero(self.preproc_layers, "preproc_layers")?;
        nonzero(self.preproc_width, "preproc_width")?;
        nonzero(self.boxcar_width, "boxcar_width")?;
        nonzero(self.memory_boxcar_width, "memory_boxcar_width")?;
        nonzero(self.readout_len, "readout_len")?;
        if self.inputs_per_layer == 0 || self.inputs_per_layer % 2 != 0 {
            return Err(Error::config(p("inputs_per_layer"), "must be a positive even number"));
        }
        if !(2..=4).contains(&self.n_actions) {
            return Err(Error::config(p("n_actions"), "must be 2, 3 or 4"));
        }
        if self.memory_depth > 4 {
            return Err(Error::config(p("memory_depth"), "must be at most 4"));
        }
        if self.readout_len % self.boxcar_width != 0 {
            return Err(Error::config(p("boxcar_width"), "must divide readout_len"));
        }
        let needed = self.n_stream_layers() * self.inputs_per_layer / 2;
        if self.n_downsampled() != needed {
            return Err(Error::config(
                p("boxcar_width"),
                format!(
                    "readout_len / boxcar_width = {} but {} layers x {} samples per quadrature need {needed}",
                    self.n_downsampled(),
                    self.n_stream_layers(),
                    self.inputs_per_layer / 2
                ),
            ));
        }
        if self.memory_depth > 0 && self.readout_len < self.memory_boxcar_width {
            return Err(Error::config(p("memory_boxcar_width"), "exceeds readout_len"));
        }
        Ok(())
    }
}

/// Location of one dense layer inside θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub w_offset: usize,
    pub b_offset: usize,
}

impl DenseLayout {
    pub fn end(&self) -> usize {
        self.b_offset + self.n_out
    }
}

fn build_layout(t: &NetTopology) -> Vec<DenseLayout> {
    let mut layers = Vec::new();
    let mut offset = 0;
    let mut push = |n_in: usize, n_out: usize| {
        let l = DenseLayout {
            n_in,
            n_out,
            w_offset: offset,
            b_offset: offset + n_in * n_out,
        };
        offset = l.end();
        layers.push(l);
    };
    let mut n_in = t.memory_len();
    for _ in 0..t.preproc_layers {
        push(n_in, t.preproc_width);
        n_in = t.preproc_width;
    }
    for k in 0..t.n_stream_layers() {
        let out = if k == t.n_hidden_layers { t.n_actions } else { t.hidden_width };
        push(n_in + t.inputs_per_layer, out);
        n_in = out;
    }
    layers
}

/// Network parameters plus topology.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    topology: NetTopology,
    layout: Vec<DenseLayout>,
    theta: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input vector of each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

impl PolicyNet {
    pub fn zeros(topology: NetTopology) -> Result<Self> {
        topology.validate("topology.")?;
        let layout = build_layout(&topology);
        let n = layout.last().map(|l| l.end()).unwrap_or(0);
        Ok(PolicyNet {
            topology,
            layout,
            theta: vec![0.0; n],
        })
    }

    /// He-normal kernels, zero biases; the output kernel is scaled by
    /// `output_gain` so a small gain starts near the uniform policy.
    pub fn random<R: Rng + ?Sized>(topology: NetTopology, output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(topology)?;
        let last = net.layout.len() - 1;
        for (i, l) in net.layout.clone().iter().enumerate() {
            let std = (2.0 / l.n_in.max(1) as f64).sqrt() * if i == last { output_gain } else { 1.0 };
            for w in &mut net.theta[l.w_offset..l.b_offset] {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
        }
        Ok(net)
    }

    pub fn from_params(topology: NetTopology, theta: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(topology)?;
        if theta.len() != net.theta.len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, topology needs {}",
                theta.len(),
                net.theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        net.theta = theta;
        Ok(net)
    }

    pub fn topology(&self) -> &NetTopology {
        &self.topology
    }

    pub fn layout(&self) -> &[DenseLayout] {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    /// Kernel (row-major `out × in`) and bias of layer `i` (preprocessing first).
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let l = self.layout[i];
        (&self.theta[l.w_offset..l.b_offset], &self.theta[l.b_offset..l.end()])
    }

    fn check_window(&self, window: &ObservationWindow) -> Result<()> {
        let t = &self.topology;
        if window.memory.len() != t.memory_len() || window.fresh.len() != t.fresh_len() {
            return Err(Error::Shape(format!(
                "window has {}+{} values, topology expects {}+{}",
                window.memory.len(),
                window.fresh.len(),
                t.memory_len(),
                t.fresh_len()
            )));
        }
        Ok(())
    }

    fn run(&self, theta: &[f64], window: &ObservationWindow, quant: Option<&QuantScheme>) -> ForwardCache {
        let t = &self.topology;
        let q = |v: f64| quant.map_or(v, |s| s.round(v).0);
        let n_pre = t.preproc_layers;
        let half = t.inputs_per_layer / 2;
        let nd = t.n_downsampled();
        let mut inputs = Vec::with_capacity(self.layout.len());
        let mut pre = Vec::with_capacity(self.layout.len());
        let mut prev: Vec<f64> = window.memory.iter().map(|&v| q(v)).collect();
        for (i, l) in self.layout.iter().enumerate() {
            let mut x = prev;
            if i >= n_pre {
                let k = i - n_pre;
                x.extend(window.fresh[k * half..(k + 1) * half].iter().map(|&v| q(v)));
                x.extend(window.fresh[nd + k * half..nd + (k + 1) * half].iter().map(|&v| q(v)));
            }
            let w = &theta[l.w_offset..l.b_offset];
            let b = &theta[l.b_offset..l.end()];
            let z: Vec<f64> = (0..l.n_out)
                .map(|o| {
                    let row = &w[o * l.n_in..(o + 1) * l.n_in];
                    q(b[o] + row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>())
                })
                .collect();
            prev = z.iter().map(|&v| v.max(0.0)).collect();
            inputs.push(x);
            pre.push(z);
        }
        let logits = pre.last().cloned().unwrap_or_default();
        let probs = softmax(&logits);
        ForwardCache {
            inputs,
            pre,
            logits,
            probs,
        }
    }

    /// Streaming evaluation; returns action probabilities.
    pub fn forward(&self, window: &ObservationWindow) -> Result<Vec<f64>> {
        Ok(self.forward_cached(window)?.probs)
    }

    pub fn forward_cached(&self, window: &ObservationWindow) -> Result<ForwardCache> {
        self.check_window(window)?;
        Ok(self.run(&self.theta, window, None))
    }

    /// Fixed-point evaluation: inputs, weights and every layer's
    /// pre-activation are rounded to the scheme.
    pub fn forward_quantized(&self, qp: &QuantizedParams, window: &ObservationWindow) -> Result<Vec<f64>> {
        self.check_window(window)?;
        if qp.theta.len() != self.theta.len() {
            return Err(Error::Shape("quantized parameters do not match the network".into()));
        }
        Ok(self.run(&qp.theta, window, Some(&qp.scheme)).probs)
    }

    pub fn quantize(&self, scheme: QuantScheme) -> QuantizedParams {
        QuantizedParams::from_params(&self.theta, scheme)
    }

    /// Accumulate `∂L/∂θ` into `grad` given `∂L/∂logits` for a cached pass.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.theta.len());
        let mut dz = dlogits.to_vec();
        for i in (0..self.layout.len()).rev() {
            let l = self.layout[i];
            let x = &cache.inputs[i];
            for o in 0..l.n_out {
                let d = dz[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[l.w_offset + o * l.n_in..l.w_offset + (o + 1) * l.n_in];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += d * v;
                }
                grad[l.b_offset + o] += d;
            }
            if i == 0 {
                break;
            }
            let n_prev = self.layout[i - 1].n_out;
            let w = &self.theta[l.w_offset..l.b_offset];
            let z_prev = &cache.pre[i - 1];
            let mut next = vec![0.0; n_prev];
            for (j, nj) in next.iter_mut().enumerate() {
                if z_prev[j] <= 0.0 {
                    continue;
                }
                *nj = (0..l.n_out).map(|o| w[o * l.n_in + j] * dz[o]).sum();
            }
            dz = next;
        }
    }
}
