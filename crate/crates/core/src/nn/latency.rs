use serde::{Deserialize, Serialize};

use super::NetTopology;

/// Fixed delays outside the network that make up the rest of the feedback
/// loop (ns).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConstants {
    pub clock_ns: f64,
    pub sample_period_ns: f64,
    /// ADC/DAC conversion and signal propagation.
    pub converter_propagation_ns: f64,
    /// Signal preprocessing overhead on the FPGA, outside the network.
    pub preprocessing_overhead_ns: f64,
}

impl Default for LoopConstants {
    fn default() -> Self {
        LoopConstants {
            clock_ns: 8.0,
            sample_period_ns: 1.0,
            converter_propagation_ns: 315.0,
            preprocessing_overhead_ns: 88.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub n_inputs: usize,
    pub exec_ns: f64,
    /// Whether this layer's execution adds to the feedback latency. Only the
    /// final layer does; earlier ones overlap acquisition.
    pub on_critical_path: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyLedger {
    pub clock_ns: f64,
    /// Execution time of a streaming hidden layer.
    pub per_layer_ns: f64,
    pub boxcar_ns: f64,
    pub total_nn_ns: f64,
    pub total_loop_ns: f64,
    pub layers: Vec<LayerTiming>,
}

/// Smallest k with 4^k ≥ n.
fn ceil_log4(n: usize) -> u32 {
    let mut k = 0;
    let mut p: usize = 1;
    while p < n {
        p = p.saturating_mul(4);
        k += 1;
    }
    k
}

/// Clock cycles of a dense layer with `n_inputs` inputs: one multiply stage
/// plus an adder tree of radix 4 over the inputs and the bias.
pub fn dense_layer_ns(n_inputs: usize, clock_ns: f64) -> f64 {
    clock_ns * (1 + ceil_log4(n_inputs + 1)) as f64
}

pub fn latency_report(t: &NetTopology, c: &LoopConstants) -> LatencyLedger {
    let n_stream = t.n_stream_layers();
    let layers: Vec<LayerTiming> = (0..n_stream)
        .map(|k| {
            let n_prev = if k == 0 { t.preproc_width } else { t.hidden_width };
            let n_inputs = n_prev + t.inputs_per_layer;
            LayerTiming {
                n_inputs,
                exec_ns: dense_layer_ns(n_inputs, c.clock_ns),
                on_critical_path: k + 1 == n_stream,
            }
        })
        .collect();
    let per_layer_ns = dense_layer_ns(t.layer_input_size(), c.clock_ns);
    // the last block has to be filled and averaged before the last layer runs
    let boxcar_ns = t.boxcar_width as f64 * c.sample_period_ns + c.clock_ns;
    let total_nn_ns = boxcar_ns + layers.last().map_or(0.0, |l| l.exec_ns);
    LatencyLedger {
        clock_ns: c.clock_ns,
        per_layer_ns,
        boxcar_ns,
        total_nn_ns,
        total_loop_ns: total_nn_ns + c.converter_propagation_ns + c.preprocessing_overhead_ns,
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_topology_numbers() {
        let r = latency_report(&NetTopology::default(), &LoopConstants::default());
        assert_eq!(r.per_layer_ns, 32.0);
        assert_eq!(r.boxcar_ns, 16.0);
        assert_eq!(r.total_nn_ns, 48.0);
        assert_eq!(r.total_loop_ns, 451.0);
        assert_eq!(r.layers.iter().filter(|l| l.on_critical_path).count(), 1);
        assert!(r.layers.last().unwrap().on_critical_path);
    }

    #[test]
    fn formula_points() {
        assert_eq!(dense_layer_ns(20, 8.0), 32.0);
        assert_eq!(dense_layer_ns(3, 8.0), 16.0);
        assert_eq!(dense_layer_ns(0, 8.0), 8.0);
        assert_eq!(ceil_log4(16), 2);
        assert_eq!(ceil_log4(17), 3);
    }
}
