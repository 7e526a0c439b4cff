use std::io::Write;

use serde::Serialize;

use super::{SimState, StepOutcome};
use crate::error::Result;

/// One row of the per-step trace dump.
#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct TraceRow {
    pub step: u32,
    pub ego_pos: f64,
    pub ego_speed: f64,
    pub n_others: usize,
    pub collision: bool,
    pub reached_goal: bool,
}

impl TraceRow {
    pub fn new(state: &SimState, outcome: &StepOutcome) -> Self {
        Self {
            step: state.step_count,
            ego_pos: state.ego.pos,
            ego_speed: state.ego.speed,
            n_others: state.others.len(),
            collision: outcome.collision,
            reached_goal: outcome.reached_goal,
        }
    }
}

/// CSV writer for [`TraceRow`]s; the header row is emitted automatically.
pub struct TraceRecorder<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> TraceRecorder<W> {
    pub fn new(sink: W) -> Self {
        Self {
            writer: csv::Writer::from_writer(sink),
        }
    }

    pub fn record(&mut self, state: &SimState, outcome: &StepOutcome) -> Result<()> {
        self.writer.serialize(TraceRow::new(state, outcome))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}
