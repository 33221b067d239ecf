use serde::{Deserialize, Serialize};

use crate::envsim::Episode;
use crate::error::{Error, Result};
use crate::readout::FilterWeights;

/// Reward scale and cycle penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Penalty λ charged per cycle.
    pub lambda_penalty: f64,
    /// Mean integrated signal of a ground-state readout.
    pub u_g: f64,
    /// Mean integrated signal of an excited-state readout.
    pub u_e: f64,
}

impl RewardConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.lambda_penalty >= 0.0) || !self.lambda_penalty.is_finite() {
            return Err(Error::config(
                format!("{prefix}lambda_penalty"),
                format!("must be >= 0, got {}", self.lambda_penalty),
            ));
        }
        if !(self.u_g - self.u_e).is_normal() {
            return Err(Error::config(format!("{prefix}u_g"), "u_g and u_e must differ"));
        }
        Ok(())
    }
}

/// `r^t = (U_{t+1} − U_t)/(U_g − U_e) − λ` for `t = 1..n`, with
/// `U_{n+1} = u_ver`.
pub fn rewards_from_signals(us: &[f64], u_ver: f64, rc: &RewardConfig) -> Vec<f64> {
    let scale = rc.u_g - rc.u_e;
    (0..us.len())
        .map(|t| {
            let next = us.get(t + 1).copied().unwrap_or(u_ver);
            (next - us[t]) / scale - rc.lambda_penalty
        })
        .collect()
}

/// Integrate every readout of an episode and compute its per-step rewards.
pub fn compute_rewards(ep: &Episode, rc: &RewardConfig, weights: &FilterWeights) -> Result<Vec<f64>> {
    if ep.verification.is_empty() {
        return Err(Error::Data("episode has no verification readout".into()));
    }
    let us = ep
        .steps
        .iter()
        .map(|s| weights.integrate(&s.trace))
        .collect::<Result<Vec<_>>>()?;
    let u_ver = weights.integrate(&ep.verification)?;
    Ok(rewards_from_signals(&us, u_ver, rc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_full_improvement_is_unit_reward() {
        let rc = RewardConfig {
            lambda_penalty: 0.0,
            u_g: -0.3,
            u_e: 0.7,
        };
        let r = rewards_from_signals(&[0.7], -0.3, &rc);
        assert!((r[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pure_penalty() {
        let rc = RewardConfig {
            lambda_penalty: 0.1,
            u_g: 0.0,
            u_e: 1.0,
        };
        let r = rewards_from_signals(&[0.2, 0.9, -0.4], 0.2, &rc);
        assert!((r.iter().sum::<f64>() + 0.3).abs() < 1e-12);
    }

    #[test]
    fn negative_lambda_rejected() {
        let rc = RewardConfig {
            lambda_penalty: -0.1,
            u_g: 0.0,
            u_e: 1.0,
        };
        assert!(matches!(rc.validate("reward."), Err(Error::Config { .. })));
    }
}
