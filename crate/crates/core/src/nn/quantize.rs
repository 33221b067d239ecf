use serde::{Deserialize, Serialize};

/// Number format for fixed-point inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantScheme {
    /// Full double precision.
    Infinite,
    /// Signed fixed point: one sign bit, `int_bits` integer and `frac_bits`
    /// fractional bits. Values truncate toward zero and saturate.
    Fixed { int_bits: u32, frac_bits: u32 },
}

impl Default for QuantScheme {
    /// 18-bit words, the native DSP multiplier width.
    fn default() -> Self {
        QuantScheme::Fixed {
            int_bits: 7,
            frac_bits: 10,
        }
    }
}

impl QuantScheme {
    /// Quantized value and whether it saturated.
    pub fn round(&self, v: f64) -> (f64, bool) {
        match *self {
            QuantScheme::Infinite => (v, false),
            QuantScheme::Fixed { int_bits, frac_bits } => {
                let step = (-(frac_bits as f64)).exp2();
                let max = (int_bits as f64).exp2() - step;
                let t = (v / step).trunc() * step;
                if t > max {
                    (max, true)
                } else if t < -max {
                    (-max, true)
                } else {
                    (t, false)
                }
            }
        }
    }

    pub fn total_bits(&self) -> Option<u32> {
        match *self {
            QuantScheme::Infinite => None,
            QuantScheme::Fixed { int_bits, frac_bits } => Some(1 + int_bits + frac_bits),
        }
    }
}

/// Parameters rounded to a scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedParams {
    pub scheme: QuantScheme,
    pub theta: Vec<f64>,
    /// At least one parameter hit the representable range.
    pub saturated: bool,
}

impl QuantizedParams {
    pub fn from_params(theta: &[f64], scheme: QuantScheme) -> Self {
        let mut saturated = false;
        let theta = theta
            .iter()
            .map(|&v| {
                let (r, s) = scheme.round(v);
                saturated |= s;
                r
            })
            .collect();
        QuantizedParams {
            scheme,
            theta,
            saturated,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_is_identity() {
        let q = QuantizedParams::from_params(&[1e-300, -3.7, 1e12], QuantScheme::Infinite);
        assert_eq!(q.theta, vec![1e-300, -3.7, 1e12]);
        assert!(!q.saturated);
    }

    #[test]
    fn zero_fraction_bits_kill_sub_unit_values() {
        let s = QuantScheme::Fixed { int_bits: 7, frac_bits: 0 };
        let q = QuantizedParams::from_params(&[0.99, -0.5, 0.01], s);
        assert!(q.theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturation_is_flagged() {
        let s = QuantScheme::Fixed { int_bits: 2, frac_bits: 2 };
        assert_eq!(s.round(100.0), (3.75, true));
        assert_eq!(s.round(-100.0), (-3.75, true));
        assert_eq!(s.round(1.3), (1.25, false));
        assert_eq!(QuantScheme::default().total_bits(), Some(18));
    }
}
