use serde::{Deserialize, Serialize};

use super::{boxcar, NetTopology};
use crate::envsim::{EpisodeView, Step};
use crate::error::{Error, Result};

/// Everything the policy sees at one decision.
///
/// `fresh` holds the boxcar-filtered current readout as `[I..., Q...]`;
/// `memory` holds, most recent cycle first, each remembered cycle's
/// downsampled I and Q followed by a one-hot encoding of the action taken.
/// Cycles before the start of the episode are all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub memory: Vec<f64>,
    pub fresh: Vec<f64>,
}

impl ObservationWindow {
    pub fn build(t: &NetTopology, history: &[Step], i: &[f64], q: &[f64]) -> Result<Self> {
        if i.len() != t.readout_len || q.len() != t.readout_len {
            return Err(Error::Shape(format!(
                "readout has {}/{} samples, topology expects {}",
                i.len(),
                q.len(),
                t.readout_len
            )));
        }
        let mut fresh = boxcar(i, t.boxcar_width)?;
        fresh.extend(boxcar(q, t.boxcar_width)?);
        let mut memory = Vec::with_capacity(t.memory_len());
        for back in 1..=t.memory_depth {
            match history.len().checked_sub(back).map(|k| &history[k]) {
                Some(step) => {
                    let tr = &step.trace;
                    if tr.len() != t.readout_len {
                        return Err(Error::Shape("remembered readout has the wrong length".into()));
                    }
                    memory.extend(boxcar(&tr.i_samples, t.memory_boxcar_width)?);
                    memory.extend(boxcar(&tr.q_samples, t.memory_boxcar_width)?);
                    let a = step.action.index();
                    if a >= t.n_actions {
                        return Err(Error::Shape(format!(
                            "action index {a} outside the {}-action encoding",
                            t.n_actions
                        )));
                    }
                    memory.extend((0..t.n_actions).map(|k| f64::from(k == a)));
                }
                None => memory.extend(std::iter::repeat_n(0.0, t.memory_features_per_cycle())),
            }
        }
        Ok(ObservationWindow { memory, fresh })
    }

    pub fn from_view(t: &NetTopology, view: &EpisodeView<'_>) -> Result<Self> {
        Self::build(t, view.history, &view.current.i_samples, &view.current.q_samples)
    }

    /// Flat `[fresh..., memory...]` encoding used by the critic.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.fresh.len() + self.memory.len());
        v.extend_from_slice(&self.fresh);
        v.extend_from_slice(&self.memory);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{Action, Level, Trace};

    fn trace(v: f64) -> Trace {
        Trace {
            i_samples: vec![v; 256],
            q_samples: vec![-v; 256],
            latent_path: vec![(0.0, Level::G)],
        }
    }

    #[test]
    fn memory_encoding_order_and_padding() {
        let t = NetTopology::with_memory(2, 3);
        let history = vec![Step {
            trace: trace(0.5),
            action: Action::Flip,
        }];
        let cur = trace(1.0);
        let w = ObservationWindow::build(&t, &history, &cur.i_samples, &cur.q_samples).unwrap();
        assert_eq!(w.fresh.len(), 64);
        assert_eq!(&w.fresh[..32], &[1.0; 32]);
        assert_eq!(&w.fresh[32..], &[-1.0; 32]);
        assert_eq!(w.memory.len(), 2 * 19);
        assert_eq!(&w.memory[..8], &[0.5; 8]);
        assert_eq!(&w.memory[8..16], &[-0.5; 8]);
        assert_eq!(&w.memory[16..19], &[0.0, 0.0, 1.0]);
        assert!(w.memory[19..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_length_rejected() {
        let t = NetTopology::default();
        assert!(ObservationWindow::build(&t, &[], &[0.0; 100], &[0.0; 100]).is_err());
    }
}
