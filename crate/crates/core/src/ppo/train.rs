use rand::Rng;
use serde::{Deserialize, Serialize};

use super::critic::Critic;
use super::reward::{compute_rewards, RewardConfig};
use super::rollout::{run_policy_episode, ActionSelection};
use super::update::{ppo_update, Optimizers, PpoHyperparams, Transition, TransitionBatch, UpdateDiagnostics};
use crate::envsim::{Environment, InitialStatePrep, Strength};
use crate::error::{Error, Result};
use crate::nn::{NetTopology, PolicyNet};
use crate::readout::FilterWeights;

/// Everything the training loop needs besides the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hp: PpoHyperparams,
    pub reward: RewardConfig,
    /// Preparations used for training episodes, cycled episode by episode.
    pub preps: Vec<InitialStatePrep>,
    pub strength: Strength,
    pub max_cycles: usize,
    /// Scale of the initial output kernel; small values start near uniform.
    pub output_gain: f64,
}

impl TrainConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.hp.validate(&format!("{prefix}ppo."))?;
        self.reward.validate(&format!("{prefix}reward."))?;
        if self.preps.is_empty() {
            return Err(Error::config(format!("{prefix}preps"), "must not be empty"));
        }
        if self.max_cycles == 0 {
            return Err(Error::config(format!("{prefix}max_cycles"), "must be >= 1"));
        }
        Ok(())
    }
}

/// Policy, critic and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub policy: PolicyNet,
    pub critic: Critic,
    pub opt: Optimizers,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(topology: NetTopology, hp: &PpoHyperparams, output_gain: f64, rng: &mut R) -> Result<Self> {
        let n_in = topology.fresh_len() + topology.memory_len();
        let policy = PolicyNet::random(topology, output_gain, rng)?;
        let critic = Critic::random(n_in, Critic::DEFAULT_WIDTH, rng);
        let opt = Optimizers::new(&policy, &critic, hp);
        Ok(Agent { policy, critic, opt })
    }
}

/// Summary of one collected batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub episodes: usize,
    pub cycles: usize,
    /// Mean cumulative reward per episode.
    pub reward_mean: f64,
    pub forced_terminations: usize,
}

/// Collect whole episodes until at least `hp.batch_measurements` cycles.
pub fn collect_batch<R: Rng + ?Sized>(
    env: &Environment,
    policy: &PolicyNet,
    cfg: &TrainConfig,
    weights: &FilterWeights,
    episode_offset: usize,
    rng: &mut R,
) -> Result<(TransitionBatch, BatchStats)> {
    let mut batch = TransitionBatch::default();
    let mut stats = BatchStats::default();
    let mut reward_sum = 0.0;
    while batch.steps.len() < cfg.hp.batch_measurements {
        let prep = cfg.preps[(episode_offset + stats.episodes) % cfg.preps.len()];
        let (ep, decisions) = run_policy_episode(
            env,
            policy,
            prep,
            cfg.strength,
            cfg.max_cycles,
            ActionSelection::Stochastic,
            rng,
        )?;
        let rewards = compute_rewards(&ep, &cfg.reward, weights)?;
        let n = decisions.len();
        for (t, (d, r)) in decisions.into_iter().zip(rewards).enumerate() {
            reward_sum += r;
            batch.steps.push(Transition {
                window: d.window,
                action: d.action,
                logp: d.logp,
                reward: r,
                done: t + 1 == n,
            });
        }
        stats.episodes += 1;
        stats.cycles += n;
        stats.forced_terminations += usize::from(ep.forced_termination);
    }
    stats.reward_mean = reward_sum / stats.episodes as f64;
    Ok((batch, stats))
}

/// Per-step record of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    /// Training episodes collected so far, including this step's batch.
    pub episodes_seen: usize,
    pub batch: BatchStats,
    pub update: UpdateDiagnostics,
}

/// Alternate collection and PPO updates for `hp.training_steps` steps.
///
/// `on_step` runs after every update and may stop training early by
/// returning `false`.
pub fn train<R, F>(
    env: &Environment,
    agent: &mut Agent,
    cfg: &TrainConfig,
    weights: &FilterWeights,
    rng: &mut R,
    mut on_step: F,
) -> Result<Vec<StepReport>>
where
    R: Rng + ?Sized,
    F: FnMut(&StepReport, &Agent) -> Result<bool>,
{
    cfg.validate("train.")?;
    let mut reports = Vec::with_capacity(cfg.hp.training_steps);
    let mut episodes_seen = 0;
    for step in 1..=cfg.hp.training_steps {
        let (batch, stats) = collect_batch(env, &agent.policy, cfg, weights, episodes_seen, rng)?;
        episodes_seen += stats.episodes;
        let update = ppo_update(&mut agent.policy, &mut agent.critic, &mut agent.opt, &batch, &cfg.hp)?;
        let report = StepReport {
            step,
            episodes_seen,
            batch: stats,
            update,
        };
        let go_on = on_step(&report, agent)?;
        reports.push(report);
        if !go_on {
            break;
        }
    }
    Ok(reports)
}
