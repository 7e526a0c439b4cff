//! Tanh-squashed Gaussian policy head scaled to the acceleration bound.

/// Acceleration bound shared by the agent and the adversary (m/s²).
pub const ACTION_BOUND: f64 = 7.6;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(1 - tanh²(u))`, stable for large |u|.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    // 1 - tanh²(u) = 4 / (e^u + e^-u)²
    2.0 * (std::f64::consts::LN_2 - u.abs() - (-2.0 * u.abs()).exp().ln_1p())
}

/// Head outputs after clamping `log_std` into `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mean: f64,
    pub log_std: f64,
    /// Whether the raw log-std was inside the clamp range (gradient passes).
    pub log_std_active: bool,
}

/// A reparameterized draw and its partial derivatives w.r.t. the head
/// outputs, holding the noise fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedSample {
    pub action: f64,
    pub log_prob: f64,
    pub pre_tanh: f64,
    pub d_action_d_mean: f64,
    pub d_action_d_log_std: f64,
    pub d_log_prob_d_mean: f64,
    pub d_log_prob_d_log_std: f64,
}

impl GaussianHead {
    pub fn new(mean: f64, raw_log_std: f64) -> Self {
        let log_std = raw_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
        Self {
            mean,
            log_std,
            log_std_active: (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_log_std),
        }
    }

    /// Mean action `ACTION_BOUND · tanh(mean)`.
    pub fn deterministic_action(&self) -> f64 {
        squash(self.mean)
    }

    pub fn sample(&self, noise: f64) -> SquashedSample {
        let std = self.log_std.exp();
        let u = self.mean + std * noise;
        let t = u.tanh();
        let log_prob = -0.5 * noise * noise - self.log_std - HALF_LN_2PI
            - ACTION_BOUND.ln()
            - log_one_minus_tanh_sq(u);
        let da_du = ACTION_BOUND * (1.0 - t * t);
        let ls_gate = if self.log_std_active { 1.0 } else { 0.0 };
        SquashedSample {
            action: ACTION_BOUND * t,
            log_prob,
            pre_tanh: u,
            d_action_d_mean: da_du,
            d_action_d_log_std: ls_gate * da_du * std * noise,
            // d/du[-ln(1 - tanh²u)] = 2·tanh(u)
            d_log_prob_d_mean: 2.0 * t,
            d_log_prob_d_log_std: ls_gate * (-1.0 + 2.0 * t * std * noise),
        }
    }

    /// Density of `action` under this head, for |action| < ACTION_BOUND.
    pub fn log_prob_of(&self, action: f64) -> f64 {
        let u = (action / ACTION_BOUND).atanh();
        let std = self.log_std.exp();
        let z = (u - self.mean) / std;
        -0.5 * z * z - self.log_std - HALF_LN_2PI - ACTION_BOUND.ln() - log_one_minus_tanh_sq(u)
    }
}

/// Free-function form: squash `mean + exp(log_std)·noise`.
pub fn sample_squashed(mean: f64, log_std: f64, noise: f64) -> (f64, f64) {
    let s = GaussianHead::new(mean, log_std).sample(noise);
    (s.action, s.log_prob)
}

pub fn squash(pre: f64) -> f64 {
    ACTION_BOUND * pre.tanh()
}

/// d squash / d pre.
pub fn squash_derivative(pre: f64) -> f64 {
    let t = pre.tanh();
    ACTION_BOUND * (1.0 - t * t)
}
