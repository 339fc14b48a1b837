//! Per-step trace records emitted by game executions.

use serde::{Deserialize, Serialize};

use crate::vec2::Vec2;

/// State at time `t` together with the joint action applied from it.
///
/// The final record of a run carries the terminal state and no actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub action: Option<Vec<Vec2>>,
    pub disturbance: Option<Vec<Vec2>>,
    pub j: f64,
    pub cv: f64,
    pub vm: f64,
    pub ub: f64,
    /// `ĥ` of the controller's macro step; absent when it did not search.
    pub controller_h: Option<usize>,
    pub h_tried: Option<usize>,
    pub level: Option<f64>,
    pub delta: Option<f64>,
    pub improved: Option<bool>,
}

/// Receives one record per game step.
pub trait TraceSink {
    fn record(&mut self, record: StepRecord);
}

impl TraceSink for Vec<StepRecord> {
    fn record(&mut self, record: StepRecord) {
        self.push(record);
    }
}

/// Discards everything.
pub struct NoTrace;

impl TraceSink for NoTrace {
    fn record(&mut self, _: StepRecord) {}
}
