use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::envsim::{Action, Environment, Episode, EpisodeView, InitialStatePrep, Strength};
use crate::error::{Error, Result};
use crate::nn::{sample_index, ObservationWindow, PolicyNet};

/// How the policy picks an action from its output distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionSelection {
    /// Gumbel-max sampling, as deployed.
    #[default]
    Stochastic,
    Argmax,
}

/// Per-decision record kept for training.
#[derive(Debug, Clone)]
pub struct Decision {
    pub window: ObservationWindow,
    pub action: usize,
    pub logp: f64,
}

/// Run one episode with the network in the loop.
pub fn run_policy_episode<R: Rng + ?Sized>(
    env: &Environment,
    net: &PolicyNet,
    prep: InitialStatePrep,
    strength: Strength,
    max_cycles: usize,
    selection: ActionSelection,
    rng: &mut R,
) -> Result<(Episode, Vec<Decision>)> {
    let topo = net.topology().clone();
    let mut decisions = Vec::new();
    let mut failure: Option<Error> = None;
    // the decision callback cannot borrow the rng the environment is using,
    // so action noise comes from a second stream seeded per episode
    let mut action_rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng.random());
    let ep = env.run_episode(
        &mut |view: &EpisodeView<'_>| {
            if failure.is_some() {
                return Action::Terminate;
            }
            let mut pick = || -> Result<Decision> {
                let window = ObservationWindow::from_view(&topo, view)?;
                let probs = net.forward(&window)?;
                let action = match selection {
                    ActionSelection::Stochastic => sample_index(&probs, &mut action_rng)?,
                    ActionSelection::Argmax => probs
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(i, _)| i)
                        .unwrap_or(0),
                };
                Ok(Decision {
                    logp: probs[action].ln(),
                    window,
                    action,
                })
            };
            match pick() {
                Ok(d) => {
                    let a = Action::from_index(d.action).unwrap_or(Action::Terminate);
                    decisions.push(d);
                    a
                }
                Err(e) => {
                    failure = Some(e);
                    Action::Terminate
                }
            }
        },
        prep,
        strength,
        max_cycles,
        rng,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((ep, decisions))
}
