use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::critic::Critic;
use super::gae::{gae_advantages, normalize};
use crate::error::{Error, Result};
use crate::nn::{ObservationWindow, PolicyNet};

/// PPO settings; names follow the usual baselines conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyperparams {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Discount γ.
    pub gamma: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub cliprange: f64,
    /// GAE λ.
    pub lam: f64,
    pub nminibatches: usize,
    pub noptepochs: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Cycles (observation–action pairs) collected per training step.
    pub batch_measurements: usize,
    pub training_steps: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        PpoHyperparams {
            learning_rate: 5e-4,
            adam_beta1: 0.98,
            adam_beta2: 0.999,
            adam_eps: 1e-5,
            gamma: 0.92,
            ent_coef: 0.01,
            vf_coef: 0.5,
            cliprange: 0.04,
            lam: 0.98,
            nminibatches: 1,
            noptepochs: 8,
            max_grad_norm: None,
            batch_measurements: 1000,
            training_steps: 500,
            normalize_advantages: true,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let p = |f: &str| format!("{prefix}{f}");
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(p("gamma"), "must be in (0, 1]"));
        }
        if !(self.lam > 0.0 && self.lam <= 1.0) {
            return Err(Error::config(p("lam"), "must be in (0, 1]"));
        }
        if !(self.cliprange > 0.0) {
            return Err(Error::config(p("cliprange"), "must be > 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(p("learning_rate"), "must be > 0"));
        }
        if self.noptepochs == 0 {
            return Err(Error::config(p("noptepochs"), "must be >= 1"));
        }
        if self.nminibatches == 0 {
            return Err(Error::config(p("nminibatches"), "must be >= 1"));
        }
        if self.batch_measurements == 0 {
            return Err(Error::config(p("batch_measurements"), "must be >= 1"));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::config(p("max_grad_norm"), "must be > 0 when set"));
            }
        }
        Ok(())
    }
}

/// One observation–action pair as recorded during collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub window: ObservationWindow,
    pub action: usize,
    /// Log-probability of `action` under the collecting policy.
    pub logp: f64,
    pub reward: f64,
    /// Last step of its episode.
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionBatch {
    pub steps: Vec<Transition>,
}

impl TransitionBatch {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Data("empty transition batch".into()));
        }
        if !self.steps.last().is_some_and(|s| s.done) {
            return Err(Error::Data("batch ends inside an episode".into()));
        }
        if self.steps.iter().any(|s| !s.reward.is_finite() || !s.logp.is_finite()) {
            return Err(Error::Data("non-finite reward or log-probability".into()));
        }
        Ok(())
    }

    pub fn episodes(&self) -> usize {
        self.steps.iter().filter(|s| s.done).count()
    }
}

/// Loss value, gradients and statistics for one pass over some transitions.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_policy: Vec<f64>,
    pub grad_critic: Vec<f64>,
}

/// PPO loss `−⟨min(ρA, clip(ρ)A)⟩ − c_H⟨H⟩ + c_V⟨(V − R)²⟩` and its gradients.
pub fn ppo_loss_grad(
    policy: &PolicyNet,
    critic: &Critic,
    steps: &[Transition],
    advantages: &[f64],
    returns: &[f64],
    hp: &PpoHyperparams,
) -> Result<LossGrad> {
    let n = steps.len() as f64;
    let mut out = LossGrad {
        loss: 0.0,
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        approx_kl: 0.0,
        clip_fraction: 0.0,
        grad_policy: vec![0.0; policy.n_params()],
        grad_critic: vec![0.0; critic.theta.len()],
    };
    for (i, s) in steps.iter().enumerate() {
        let cache = policy.forward_cached(&s.window)?;
        let p = &cache.probs;
        let logp = p[s.action].ln();
        let ratio = (logp - s.logp).exp();
        let a = advantages[i];
        let clipped = ratio.clamp(1.0 - hp.cliprange, 1.0 + hp.cliprange);
        let unclipped_active = ratio * a <= clipped * a;
        let surrogate = if unclipped_active { ratio * a } else { clipped * a };
        if (ratio - 1.0).abs() > hp.cliprange {
            out.clip_fraction += 1.0;
        }
        let h: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
        out.policy_loss -= surrogate / n;
        out.entropy += h / n;
        out.approx_kl += (s.logp - logp) / n;

        let mut dlogits = vec![0.0; p.len()];
        for (k, d) in dlogits.iter_mut().enumerate() {
            let onehot = f64::from(k == s.action);
            if unclipped_active {
                *d -= a * ratio * (onehot - p[k]);
            }
            let lp = if p[k] > 0.0 { p[k].ln() } else { 0.0 };
            *d += hp.ent_coef * p[k] * (lp + h);
            *d /= n;
        }
        policy.backward(&cache, &dlogits, &mut out.grad_policy);

        let c = critic.forward_cached(&s.window.flat())?;
        let err = c.value - returns[i];
        out.value_loss += err * err / n;
        critic.backward(&c, 2.0 * hp.vf_coef * err / n, &mut out.grad_critic);
    }
    out.clip_fraction /= n;
    out.loss = out.policy_loss - hp.ent_coef * out.entropy + hp.vf_coef * out.value_loss;
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Optimizer state for the policy and the critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub policy: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(policy: &PolicyNet, critic: &Critic, hp: &PpoHyperparams) -> Self {
        let make = |n| Adam::new(n, hp.learning_rate, hp.adam_beta1, hp.adam_beta2, hp.adam_eps);
        Optimizers {
            policy: make(policy.n_params()),
            critic: make(critic.theta.len()),
        }
    }
}

/// Critic values, GAE advantages (normalized if configured) and returns.
pub fn advantages_for(critic: &Critic, batch: &TransitionBatch, hp: &PpoHyperparams) -> Result<(Vec<f64>, Vec<f64>)> {
    let values = batch
        .steps
        .iter()
        .map(|s| critic.value(&s.window.flat()))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = batch.steps.iter().map(|s| s.reward).collect();
    let done: Vec<bool> = batch.steps.iter().map(|s| s.done).collect();
    let (mut adv, ret) = gae_advantages(&rewards, &values, &done, hp.gamma, hp.lam);
    if hp.normalize_advantages {
        normalize(&mut adv);
    }
    Ok((adv, ret))
}

/// `noptepochs` passes of clipped-surrogate Adam steps over the batch.
/// Parameters are only written back if every step stays finite.
pub fn ppo_update(
    policy: &mut PolicyNet,
    critic: &mut Critic,
    opt: &mut Optimizers,
    batch: &TransitionBatch,
    hp: &PpoHyperparams,
) -> Result<UpdateDiagnostics> {
    batch.validate()?;
    let (adv, ret) = advantages_for(critic, batch, hp)?;
    let mut pi = policy.clone();
    let mut vf = critic.clone();
    let mut o = opt.clone();
    let n = batch.steps.len();
    let chunk = n.div_ceil(hp.nminibatches);
    let mut diag = UpdateDiagnostics::default();
    for _ in 0..hp.noptepochs {
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let mut lg = ppo_loss_grad(&pi, &vf, &batch.steps[start..end], &adv[start..end], &ret[start..end], hp)?;
            let sq: f64 = lg.grad_policy.iter().chain(&lg.grad_critic).map(|g| g * g).sum();
            let gnorm = sq.sqrt();
            diag = UpdateDiagnostics {
                policy_loss: lg.policy_loss,
                value_loss: lg.value_loss,
                entropy: lg.entropy,
                approx_kl: lg.approx_kl,
                clip_fraction: lg.clip_fraction,
                grad_norm: gnorm,
            };
            if !gnorm.is_finite() || !lg.loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite PPO gradient; last diagnostics {diag:?}")));
            }
            if let Some(max) = hp.max_grad_norm {
                if gnorm > max {
                    let s = max / gnorm;
                    lg.grad_policy.iter_mut().chain(lg.grad_critic.iter_mut()).for_each(|g| *g *= s);
                }
            }
            o.policy.step(pi.params_mut(), &lg.grad_policy);
            o.critic.step(&mut vf.theta, &lg.grad_critic);
        }
    }
    *policy = pi;
    *critic = vf;
    *opt = o;
    Ok(diag)
}
