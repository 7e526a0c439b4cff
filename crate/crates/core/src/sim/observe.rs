use std::f64::consts::PI;

use super::{ego_pose, vehicle_xy, SimConfig, SimState};

/// Ego speed and heading, then six neighbour triples.
pub const OBS_DIM: usize = 2 + 3 * NEIGHBOR_SLOTS;
pub const NEIGHBOR_SLOTS: usize = 6;

/// Triple written for an empty neighbour slot: farthest distance, straight
/// ahead, no relative motion.
pub const EMPTY_SLOT: [f64; 3] = [1.0, 0.0, 0.0];

/// Normalized observation vector. Clean observations from [`observe`] lie
/// in `[-1, 1]`; perturbed ones (`o + δ`) may leave that box slightly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_normalized(&self) -> bool {
        self.0.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// `self + delta`, componentwise.
    pub fn perturbed(&self, delta: &[f64]) -> Observation {
        let mut out = self.0;
        for (o, d) in out.iter_mut().zip(delta) {
            *o += d;
        }
        Observation(out)
    }

    pub fn from_slice(values: &[f64]) -> Option<Observation> {
        values.try_into().ok().map(Observation)
    }
}

/// Slot order: front, rear, front-left, rear-left, front-right, rear-right.
fn slot_for_bearing(bearing: f64) -> usize {
    const SIXTH: f64 = PI / 6.0;
    let b = bearing.abs();
    let left = bearing > 0.0;
    if b <= SIXTH {
        0
    } else if b > 5.0 * SIXTH {
        1
    } else if b <= 3.0 * SIXTH {
        if left {
            2
        } else {
            4
        }
    } else if left {
        3
    } else {
        5
    }
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Normalized observation of `state`.
///
/// Layout: `2·v/v_max − 1`, `heading/π`, then per slot the distance mapped
/// linearly from `[0, sensing_range]` to `[−1, 1]`, the bearing relative to
/// the ego heading over π, and the speed difference over `v_max`. Vehicles
/// beyond sensing range are ignored.
pub fn observe(state: &SimState, config: &SimConfig) -> Observation {
    let g = &config.geometry;
    let (ego_xy, heading) = ego_pose(g, state.ego.pos);
    let mut out = [0.0; OBS_DIM];
    out[0] = (2.0 * state.ego.speed / config.v_max - 1.0).clamp(-1.0, 1.0);
    out[1] = wrap_angle(heading) / PI;

    let mut nearest: [Option<(f64, f64, f64)>; NEIGHBOR_SLOTS] = [None; NEIGHBOR_SLOTS];
    for v in &state.others {
        let p = vehicle_xy(g, v);
        let (dx, dy) = (p[0] - ego_xy[0], p[1] - ego_xy[1]);
        let dist = dx.hypot(dy);
        if dist > config.sensing_range {
            continue;
        }
        let bearing = wrap_angle(dy.atan2(dx) - heading);
        let slot = slot_for_bearing(bearing);
        if nearest[slot].is_none_or(|(d, _, _)| dist < d) {
            nearest[slot] = Some((dist, bearing, v.speed - state.ego.speed));
        }
    }
    for (slot, entry) in nearest.iter().enumerate() {
        let triple = match entry {
            Some((d, b, dv)) => [
                2.0 * d / config.sensing_range - 1.0,
                b / PI,
                (dv / config.v_max).clamp(-1.0, 1.0),
            ],
            None => EMPTY_SLOT,
        };
        out[2 + 3 * slot..5 + 3 * slot].copy_from_slice(&triple);
    }
    Observation(out)
}
