use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ACTION_BOUND;

/// Fixed geometry of the unprotected left turn.
///
/// The ego drives north along `x = 0`, crosses the stop line at the origin,
/// turns left on a quarter circle of `turn_radius` centred at
/// `(-turn_radius, 0)` and leaves westbound. Oncoming lane `k` runs south
/// along `x = -(k + 1)·lane_width`; vehicles spawn at
/// `y = oncoming_lane_length / 2` and leave at `y = -oncoming_lane_length / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    /// Straight approach before the stop line (m).
    pub approach_length: f64,
    pub turn_radius: f64,
    /// Straight westbound run after the arc, up to the goal (m).
    pub exit_length: f64,
    pub lane_width: f64,
    pub oncoming_lane_length: f64,
    /// How far past the end of the arc the ego still counts as inside the
    /// conflict zone (m).
    pub conflict_extent: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            approach_length: 2.0,
            turn_radius: 8.0,
            exit_length: 8.0,
            lane_width: 3.5,
            oncoming_lane_length: 200.0,
            conflict_extent: 2.0,
        }
    }
}

impl Geometry {
    pub fn arc_length(&self) -> f64 {
        self.turn_radius * std::f64::consts::FRAC_PI_2
    }

    /// Total ego path length; reaching it is success.
    pub fn turn_path_length(&self) -> f64 {
        self.approach_length + self.arc_length() + self.exit_length
    }

    /// Arc-length interval of the ego path that lies in the conflict zone.
    pub fn conflict_interval(&self) -> (f64, f64) {
        let start = self.approach_length;
        (start, start + self.arc_length() + self.conflict_extent)
    }

    pub fn lane_x(&self, lane: usize) -> f64 {
        -((lane + 1) as f64) * self.lane_width
    }

    pub fn spawn_y(&self) -> f64 {
        0.5 * self.oncoming_lane_length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Speed cap for every vehicle (m/s).
    pub v_max: f64,
    /// Ego acceleration interval (m/s²).
    pub accel_min: f64,
    pub accel_max: f64,
    /// Per-second arrival probability per oncoming lane.
    pub arrival_prob: f64,
    pub max_steps: u32,
    /// Control step (s).
    pub dt: f64,
    /// Integration sub-steps per control step; collisions are tested at each.
    pub substeps: u32,
    pub geometry: Geometry,
    /// Collision when centres are closer than twice this (m).
    pub vehicle_half_length: f64,
    pub n_lanes: usize,
    /// Traffic pre-roll before the ego starts (s).
    pub warmup_seconds: u32,
    pub sensing_range: f64,
    /// Desired-speed interval for oncoming vehicles (m/s).
    pub other_speed_min: f64,
    pub other_speed_max: f64,
    /// Car-following time headway between oncoming vehicles (s).
    pub headway: f64,
    /// Standstill bumper gap added to the collision distance (m).
    pub min_gap: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            v_max: 15.0,
            accel_min: -ACTION_BOUND,
            accel_max: ACTION_BOUND,
            arrival_prob: 0.5,
            max_steps: 30,
            dt: 1.0,
            substeps: 10,
            geometry: Geometry::default(),
            vehicle_half_length: 1.5,
            n_lanes: 1,
            warmup_seconds: 8,
            sensing_range: 50.0,
            other_speed_min: 9.0,
            other_speed_max: 15.0,
            headway: 1.5,
            min_gap: 2.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let g = &self.geometry;
        if !(self.v_max > 0.0) {
            return bad(format!("v_max must be positive, got {}", self.v_max));
        }
        if !(self.accel_min < self.accel_max) {
            return bad(format!("empty acceleration interval [{}, {}]", self.accel_min, self.accel_max));
        }
        if !(0.0..=1.0).contains(&self.arrival_prob) {
            return bad(format!("arrival_prob must lie in [0, 1], got {}", self.arrival_prob));
        }
        if self.max_steps < 1 {
            return bad("max_steps must be at least 1".into());
        }
        if !(self.dt > 0.0) || self.substeps < 1 {
            return bad("dt must be positive and substeps at least 1".into());
        }
        if !(self.vehicle_half_length > 0.0) || !(self.sensing_range > 0.0) {
            return bad("vehicle_half_length and sensing_range must be positive".into());
        }
        if !(0.0 <= self.other_speed_min && self.other_speed_min <= self.other_speed_max && self.other_speed_max <= self.v_max) {
            return bad("need 0 <= other_speed_min <= other_speed_max <= v_max".into());
        }
        if !(self.headway > 0.0) || !(self.min_gap >= 0.0) {
            return bad("headway must be positive and min_gap non-negative".into());
        }
        if [g.approach_length, g.turn_radius, g.exit_length, g.lane_width, g.oncoming_lane_length]
            .iter()
            .any(|v| !(*v > 0.0))
            || !(g.conflict_extent >= 0.0)
        {
            return bad("geometry lengths must be positive".into());
        }
        // the westbound exit must clear the last oncoming lane
        if g.turn_radius < self.n_lanes as f64 * g.lane_width + 2.0 * self.vehicle_half_length {
            return bad(format!(
                "turn_radius {} too small to clear {} oncoming lane(s)",
                g.turn_radius, self.n_lanes
            ));
        }
        if self.warmup_seconds as f64 * self.v_max * self.dt.max(1.0) >= g.oncoming_lane_length {
            return bad("warm-up window long enough for vehicles to leave the lane".into());
        }
        Ok(())
    }

    pub fn goal_position(&self) -> f64 {
        self.geometry.turn_path_length()
    }
}
