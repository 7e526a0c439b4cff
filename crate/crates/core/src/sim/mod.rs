//! Deterministic kinematic unprotected-left-turn environment.
//!
//! The ego follows a fixed turn path and controls only its longitudinal
//! acceleration. Oncoming vehicles follow their leaders with a time-headway
//! rule and ignore the ego.

mod config;
mod observe;
mod trace;

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng as _;

pub use config::{Geometry, SimConfig};
pub use observe::{observe, Observation, NEIGHBOR_SLOTS, OBS_DIM};
pub use trace::{TraceRecorder, TraceRow};

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct EgoState {
    /// Arc length travelled along the turn path (m).
    pub pos: f64,
    pub speed: f64,
    /// Heading (rad, counter-clockwise from east).
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    /// Distance travelled from the lane's spawn point (m).
    pub pos: f64,
    pub speed: f64,
    pub lane: usize,
    pub desired_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub ego: EgoState,
    pub others: Vec<Vehicle>,
    pub step_count: u32,
    pub done: bool,
    rng: Rng,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub collision: bool,
    pub reached_goal: bool,
    /// Ego speed at the end of the step (m/s).
    pub ego_speed: f64,
    pub done: bool,
}

/// Ego position and heading at arc length `s`.
pub fn ego_pose(geometry: &Geometry, s: f64) -> ([f64; 2], f64) {
    let a = geometry.approach_length;
    let r = geometry.turn_radius;
    if s <= a {
        ([0.0, s - a], FRAC_PI_2)
    } else if s <= a + geometry.arc_length() {
        let phi = (s - a) / r;
        ([-r + r * phi.cos(), r * phi.sin()], FRAC_PI_2 + phi)
    } else {
        let d = s - a - geometry.arc_length();
        ([-r - d, r], PI)
    }
}

/// World position of an oncoming vehicle.
pub fn vehicle_xy(geometry: &Geometry, v: &Vehicle) -> [f64; 2] {
    [geometry.lane_x(v.lane), geometry.spawn_y() - v.pos]
}

/// Fresh episode: ego at the path start at rest, traffic pre-rolled for
/// `warmup_seconds` with arrivals sampled every second.
pub fn reset(config: &SimConfig, seed: u64) -> Result<SimState> {
    config.validate()?;
    let (_, heading) = ego_pose(&config.geometry, 0.0);
    let mut state = SimState {
        ego: EgoState {
            pos: 0.0,
            speed: 0.0,
            heading,
        },
        others: Vec::new(),
        step_count: 0,
        done: false,
        rng: seeded(seed),
    };
    let warm_steps = (config.warmup_seconds as f64 / config.dt).round() as u32;
    for _ in 0..warm_steps {
        state.advance_traffic(config, |_| false);
        state.spawn_arrivals(config);
    }
    Ok(state)
}

impl SimState {
    /// Builds a state directly, for fixtures. The traffic RNG is seeded
    /// from `seed`.
    pub fn from_parts(ego: EgoState, others: Vec<Vehicle>, seed: u64) -> Self {
        Self {
            ego,
            others,
            step_count: 0,
            done: false,
            rng: seeded(seed),
        }
    }

    /// Advances one control step with the ego applying `ego_accel`
    /// (clamped to the configured interval).
    pub fn step(&mut self, config: &SimConfig, ego_accel: f64) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        if !ego_accel.is_finite() {
            return Err(Error::NonFinite(format!("ego acceleration {ego_accel}")));
        }
        let accel = ego_accel.clamp(config.accel_min, config.accel_max);
        let geometry = &config.geometry;
        let (zone_lo, zone_hi) = geometry.conflict_interval();
        let threshold = 2.0 * config.vehicle_half_length;
        let h = config.dt / config.substeps as f64;
        let goal = config.goal_position();
        let v_max = config.v_max;

        let mut ego = self.ego.clone();
        let mut collision = false;
        let mut reached_goal = false;
        self.advance_traffic(config, |others| {
            let v0 = ego.speed;
            let v1 = (v0 + accel * h).clamp(0.0, v_max);
            ego.pos += 0.5 * (v0 + v1) * h;
            ego.speed = v1;
            let (xy, heading) = ego_pose(geometry, ego.pos);
            ego.heading = heading;
            if (zone_lo..=zone_hi).contains(&ego.pos) {
                collision = others.iter().any(|o| {
                    let p = vehicle_xy(geometry, o);
                    (p[0] - xy[0]).hypot(p[1] - xy[1]) < threshold
                });
            }
            if !collision && ego.pos >= goal {
                reached_goal = true;
            }
            collision || reached_goal
        });
        self.ego = ego;
        self.spawn_arrivals(config);
        self.step_count += 1;
        self.done = collision || reached_goal || self.step_count >= config.max_steps;
        Ok(StepOutcome {
            collision,
            reached_goal,
            ego_speed: self.ego.speed,
            done: self.done,
        })
    }

    /// Moves oncoming traffic one control step in sub-steps. After each
    /// sub-step `probe` sees the vehicles; once it returns true the rest
    /// of the step still integrates traffic but stops calling it.
    fn advance_traffic(&mut self, config: &SimConfig, mut probe: impl FnMut(&[Vehicle]) -> bool) {
        // speeds for this step from leader gaps at the step start
        let mut new_speeds = Vec::with_capacity(self.others.len());
        for (i, v) in self.others.iter().enumerate() {
            let leader_gap = self
                .others
                .iter()
                .enumerate()
                .filter(|(j, o)| *j != i && o.lane == v.lane && o.pos > v.pos)
                .map(|(_, o)| o.pos - v.pos)
                .fold(f64::INFINITY, f64::min);
            let free = (v.speed + config.accel_max * config.dt).min(v.desired_speed);
            let safe = ((leader_gap - self.spacing(config)) / config.headway.max(config.dt)).max(0.0);
            new_speeds.push(free.min(safe).clamp(0.0, config.v_max));
        }
        for (v, s) in self.others.iter_mut().zip(&new_speeds) {
            v.speed = *s;
        }
        let h = config.dt / config.substeps as f64;
        let mut stopped = false;
        for _ in 0..config.substeps {
            for v in &mut self.others {
                v.pos += v.speed * h;
            }
            if !stopped {
                stopped = probe(&self.others);
            }
        }
        let len = config.geometry.oncoming_lane_length;
        self.others.retain(|v| v.pos <= len);
    }

    fn spacing(&self, config: &SimConfig) -> f64 {
        2.0 * config.vehicle_half_length + config.min_gap
    }

    fn spawn_arrivals(&mut self, config: &SimConfig) {
        let p = (config.arrival_prob * config.dt).min(1.0);
        for lane in 0..config.n_lanes {
            // always two draws per lane per step
            let arrive = self.rng.random::<f64>() < p;
            let desired = if config.other_speed_max > config.other_speed_min {
                self.rng.random_range(config.other_speed_min..config.other_speed_max)
            } else {
                config.other_speed_min
            };
            if !arrive {
                continue;
            }
            let last_pos = self
                .others
                .iter()
                .filter(|o| o.lane == lane)
                .map(|o| o.pos)
                .fold(f64::INFINITY, f64::min);
            let room = last_pos - self.spacing(config);
            if room <= 0.0 {
                continue;
            }
            let speed = desired.min(room / config.headway.max(config.dt));
            self.others.push(Vehicle {
                pos: 0.0,
                speed,
                lane,
                desired_speed: desired,
            });
        }
    }
}

/// `v / v_max − c`, with `c = 1` on collision.
pub fn agent_reward(outcome: &StepOutcome, config: &SimConfig) -> f64 {
    let cost = if outcome.collision { 1.0 } else { 0.0 };
    outcome.ego_speed / config.v_max - cost
}

/// Collision indicator.
pub fn adversary_reward(outcome: &StepOutcome) -> f64 {
    if outcome.collision {
        1.0
    } else {
        0.0
    }
}

/// Owns a config and the current episode state.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimConfig,
    pub state: SimState,
}

impl Simulator {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self> {
        let state = reset(&config, seed)?;
        Ok(Self { config, state })
    }

    pub fn reset(&mut self, seed: u64) -> Result<()> {
        self.state = reset(&self.config, seed)?;
        Ok(())
    }

    pub fn observe(&self) -> Observation {
        observe(&self.state, &self.config)
    }

    pub fn step(&mut self, ego_accel: f64) -> Result<StepOutcome> {
        self.state.step(&self.config, ego_accel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_road() -> SimConfig {
        SimConfig {
            arrival_prob: 0.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = SimConfig::default();
        assert_eq!(reset(&cfg, 7).unwrap(), reset(&cfg, 7).unwrap());
    }

    #[test]
    fn zero_arrival_probability_means_empty_road() {
        for seed in 0..20 {
            assert!(reset(&empty_road(), seed).unwrap().others.is_empty());
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SimConfig {
            arrival_prob: 1.5,
            ..SimConfig::default()
        };
        assert!(matches!(reset(&cfg, 0), Err(Error::Config(_))));
        let cfg = SimConfig {
            v_max: 0.0,
            ..SimConfig::default()
        };
        assert!(matches!(reset(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn full_throttle_on_empty_road_reaches_goal() {
        let cfg = empty_road();
        let mut s = reset(&cfg, 1).unwrap();
        // closed form: with a = 7.6 speed saturates at 15 after 15/7.6 s,
        // covering 15²/(2·7.6) m; the remainder runs at 15 m/s
        let goal = cfg.goal_position();
        let t_sat = cfg.v_max / cfg.accel_max;
        let d_sat = cfg.v_max * cfg.v_max / (2.0 * cfg.accel_max);
        let t_goal = t_sat + (goal - d_sat) / cfg.v_max;
        let expected_steps = t_goal.ceil() as u32;
        let mut steps = 0;
        loop {
            let out = s.step(&cfg, 7.6).unwrap();
            steps += 1;
            assert!(!out.collision);
            if out.done {
                assert!(out.reached_goal);
                break;
            }
        }
        assert_eq!(steps, expected_steps);
        assert!(steps < cfg.max_steps);
    }

    #[test]
    fn standstill_times_out() {
        let cfg = empty_road();
        let mut s = reset(&cfg, 2).unwrap();
        for t in 1..=cfg.max_steps {
            let out = s.step(&cfg, 0.0).unwrap();
            assert_eq!(s.ego.pos, 0.0);
            assert_eq!(out.done, t == cfg.max_steps);
            assert!(!out.reached_goal && !out.collision);
        }
        assert!(matches!(s.step(&cfg, 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn hand_built_conflict_collides() {
        let cfg = empty_road();
        let g = &cfg.geometry;
        // ego enters the arc at speed 10 and coasts; it crosses lane 0 at
        // arc angle phi where -r + r·cos(phi) = lane_x(0)
        let r = g.turn_radius;
        let phi = ((g.lane_x(0) + r) / r).acos();
        let s_cross = g.approach_length + r * phi;
        let y_cross = r * phi.sin();
        let ego_start = s_cross - 5.0; // reaches the crossing after 0.5 s at 10 m/s
        // oncoming vehicle arrives at the crossing after 0.5 s at 12 m/s
        let other = Vehicle {
            pos: g.spawn_y() - y_cross - 6.0,
            speed: 12.0,
            lane: 0,
            desired_speed: 12.0,
        };
        let (_, heading) = ego_pose(g, ego_start);
        let mut s = SimState::from_parts(
            EgoState {
                pos: ego_start,
                speed: 10.0,
                heading,
            },
            vec![other],
            0,
        );
        let out = s.step(&cfg, 0.0).unwrap();
        assert!(out.collision);
        assert!(!out.reached_goal);
        assert!(out.done);
        assert_eq!(agent_reward(&out, &cfg), 10.0 / 15.0 - 1.0);
        assert_eq!(adversary_reward(&out), 1.0);
    }

    #[test]
    fn rewards() {
        let cfg = SimConfig::default();
        let mk = |speed, collision| StepOutcome {
            collision,
            reached_goal: false,
            ego_speed: speed,
            done: collision,
        };
        assert_eq!(agent_reward(&mk(15.0, false), &cfg), 1.0);
        assert_eq!(agent_reward(&mk(15.0, true), &cfg), 0.0);
        assert_eq!(agent_reward(&mk(0.0, false), &cfg), 0.0);
        assert_eq!(adversary_reward(&mk(3.0, true)), 1.0);
        assert_eq!(adversary_reward(&mk(3.0, false)), 0.0);
    }

    #[test]
    fn collision_free_episode_has_zero_adversary_return() {
        let cfg = empty_road();
        let mut s = reset(&cfg, 3).unwrap();
        let mut total = 0.0;
        loop {
            let out = s.step(&cfg, 3.0).unwrap();
            total += adversary_reward(&out);
            if out.done {
                break;
            }
        }
        assert_eq!(total, 0.0);
    }

    #[test]
    fn oncoming_vehicles_keep_their_spacing() {
        let cfg = SimConfig {
            arrival_prob: 1.0,
            ..SimConfig::default()
        };
        let mut s = reset(&cfg, 11).unwrap();
        while !s.done {
            s.step(&cfg, 0.0).unwrap();
            let mut pos: Vec<f64> = s.others.iter().map(|o| o.pos).collect();
            pos.sort_by(f64::total_cmp);
            for w in pos.windows(2) {
                assert!(w[1] - w[0] >= 2.0 * cfg.vehicle_half_length, "{pos:?}");
            }
        }
    }
}
