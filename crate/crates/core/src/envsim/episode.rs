use serde::{Deserialize, Serialize};

use super::{Action, Level, Trace};

/// One feedback cycle: the readout the agent saw and what it chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub trace: Trace,
    pub action: Action,
}

/// A complete initialization attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// Prepared level (hidden).
    pub initial: Level,
    pub steps: Vec<Step>,
    pub verification: Trace,
    /// Level after the verification readout (hidden).
    pub final_level: Level,
    /// The cycle cap ended the episode instead of a `Terminate`.
    pub forced_termination: bool,
}

impl Episode {
    pub fn n_cycles(&self) -> usize {
        self.steps.len()
    }

    /// Level at the start of the verification readout (hidden).
    pub fn verified_level(&self) -> Level {
        self.verification.initial_level()
    }
}

/// What a decision callback gets to see: earlier cycles and the fresh readout.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeView<'a> {
    pub history: &'a [Step],
    pub current: &'a Trace,
}

impl EpisodeView<'_> {
    /// 1-based index of the cycle being decided.
    pub fn cycle(&self) -> usize {
        self.history.len() + 1
    }
}
