//! Proximal policy optimization for the streaming policy network.

mod adam;
mod critic;
mod gae;
mod reward;
mod rollout;
mod train;
mod update;

pub use adam::Adam;
pub use critic::{Critic, CriticCache};
pub use gae::{gae_advantages, normalize};
pub use reward::{compute_rewards, rewards_from_signals, RewardConfig};
pub use rollout::{run_policy_episode, ActionSelection, Decision};
pub use train::{collect_batch, train, Agent, BatchStats, StepReport, TrainConfig};
pub use update::{
    advantages_for, ppo_loss_grad, ppo_update, LossGrad, Optimizers, PpoHyperparams, Transition, TransitionBatch,
    UpdateDiagnostics,
};
