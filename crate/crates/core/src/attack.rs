//! Observation perturbations: the targeted PG loss, BIM under an ℓ∞
//! budget, the gradient/orthogonal probe and random sphere noise.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::DeterministicPolicy;
use crate::rng::{normal_vec, Rng};

/// Which way BIM moves along the sign of ∇_δ J_PG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BimSign {
    /// `δ ← clip(δ − α·sign(∇J))`: pulls the agent toward the target action.
    #[default]
    Descend,
    /// `δ ← clip(δ + α·sign(∇J))`, the sign as usually printed.
    Ascend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// ℓ∞ budget.
    pub epsilon: f64,
    pub iters: u32,
    /// Per-iteration step; `None` means `epsilon / iters`.
    pub step_size: Option<f64>,
    pub sign: BimSign,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            iters: 50,
            step_size: None,
            sign: BimSign::Descend,
        }
    }
}

impl AttackConfig {
    pub fn new(epsilon: f64, iters: u32) -> Result<Self> {
        let cfg = Self {
            epsilon,
            iters,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    pub fn step_size(&self) -> f64 {
        match self.step_size {
            Some(s) => s,
            None if self.iters > 0 => self.epsilon / self.iters as f64,
            None => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("attack epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.iters > 0 && self.epsilon > 0.0 && !(self.step_size() > 0.0) {
            return Err(Error::Config("BIM step size must be positive".into()));
        }
        Ok(())
    }
}

/// `‖a_adv − μ(o + δ)‖²`.
pub fn pg_loss(policy: &impl DeterministicPolicy, obs: &[f64], delta: &[f64], adversary_action: f64) -> Result<f64> {
    check_dim(obs.len(), delta.len())?;
    let shifted: Vec<f64> = obs.iter().zip(delta).map(|(o, d)| o + d).collect();
    let r = adversary_action - policy.mean_action(&shifted)?;
    Ok(r * r)
}

/// PG loss and its gradient with respect to `delta`.
pub fn pg_loss_and_grad(
    policy: &impl DeterministicPolicy,
    obs: &[f64],
    delta: &[f64],
    adversary_action: f64,
) -> Result<(f64, Vec<f64>)> {
    check_dim(obs.len(), delta.len())?;
    let shifted: Vec<f64> = obs.iter().zip(delta).map(|(o, d)| o + d).collect();
    let (mu, grad_mu) = policy.mean_action_and_grad(&shifted)?;
    let r = adversary_action - mu;
    Ok((r * r, grad_mu.into_iter().map(|g| -2.0 * r * g).collect()))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Basic Iterative Method toward `adversary_action`. Starts from δ = 0 and
/// clips to `[-ε, ε]` after every step.
pub fn bim_perturb(
    policy: &impl DeterministicPolicy,
    obs: &[f64],
    adversary_action: f64,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut delta = vec![0.0; obs.len()];
    if cfg.iters == 0 || cfg.epsilon == 0.0 {
        return Ok(delta);
    }
    let eps = cfg.epsilon;
    let step = match cfg.sign {
        BimSign::Descend => -cfg.step_size(),
        BimSign::Ascend => cfg.step_size(),
    };
    for _ in 0..cfg.iters {
        let (_, grad) = pg_loss_and_grad(policy, obs, &delta, adversary_action)?;
        for (d, g) in delta.iter_mut().zip(&grad) {
            *d = (*d + step * sign(*g)).clamp(-eps, eps);
        }
    }
    Ok(delta)
}

/// Magnitudes along the normalized action gradient and an orthogonal
/// direction, with their combined ℓ2 cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps_max: f64,
}

impl ProbeConfig {
    /// The two directions are orthonormal, so the perturbation norm is
    /// `hypot(beta1, beta2)`.
    pub fn new(beta1: f64, beta2: f64, eps_max: f64) -> Result<Self> {
        if !(eps_max >= 0.0) {
            return Err(Error::Config(format!("eps_max must be >= 0, got {eps_max}")));
        }
        if beta1.hypot(beta2) > eps_max {
            return Err(Error::Config(format!(
                "probe magnitude |({beta1}, {beta2})| exceeds eps_max {eps_max}"
            )));
        }
        Ok(Self { beta1, beta2, eps_max })
    }
}

/// Unit action-gradient direction and a random unit vector orthogonal to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBasis {
    pub grad: Vec<f64>,
    pub grad_unit: Vec<f64>,
    pub orthogonal: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn probe_basis(policy: &impl DeterministicPolicy, obs: &[f64], rng: &mut Rng) -> Result<ProbeBasis> {
    let (_, grad) = policy.mean_action_and_grad(obs)?;
    let g_norm = norm(&grad);
    if !(g_norm >= 1e-12) {
        return Err(Error::DegenerateGradient(g_norm));
    }
    let grad_unit: Vec<f64> = grad.iter().map(|g| g / g_norm).collect();
    loop {
        let mut u = normal_vec(rng, obs.len());
        // two Gram-Schmidt passes
        for _ in 0..2 {
            let c = dot(&u, &grad_unit);
            for (ui, gi) in u.iter_mut().zip(&grad_unit) {
                *ui -= c * gi;
            }
        }
        let n = norm(&u);
        if n > 1e-6 {
            u.iter_mut().for_each(|ui| *ui /= n);
            return Ok(ProbeBasis {
                grad,
                grad_unit,
                orthogonal: u,
            });
        }
    }
}

impl ProbeBasis {
    pub fn apply(&self, obs: &[f64], cfg: &ProbeConfig) -> Result<Vec<f64>> {
        let step: Vec<f64> = self
            .grad_unit
            .iter()
            .zip(&self.orthogonal)
            .map(|(g, u)| cfg.beta1 * g + cfg.beta2 * u)
            .collect();
        let n = norm(&step);
        if n > cfg.eps_max * (1.0 + 1e-12) {
            return Err(Error::Usage(format!("probe perturbation norm {n} exceeds {}", cfg.eps_max)));
        }
        Ok(obs.iter().zip(&step).map(|(o, s)| o + s).collect())
    }
}

/// `o + β1·∇μ/‖∇μ‖ + β2·u` with a fresh random `u ⊥ ∇μ`.
pub fn gradient_orthogonal_probe(
    policy: &impl DeterministicPolicy,
    obs: &[f64],
    cfg: &ProbeConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    probe_basis(policy, obs, rng)?.apply(obs, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseShape {
    /// Exactly on the sphere of radius ε.
    #[default]
    Surface,
    /// Uniform inside the ball of radius ε.
    Ball,
}

pub fn random_sphere_noise(obs: &[f64], epsilon: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    random_noise(obs, epsilon, NoiseShape::Surface, rng)
}

pub fn random_noise(obs: &[f64], epsilon: f64, shape: NoiseShape, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("noise radius must be >= 0, got {epsilon}")));
    }
    let z = loop {
        let z = normal_vec(rng, obs.len());
        if norm(&z) > 0.0 {
            break z;
        }
    };
    let radius = match shape {
        NoiseShape::Surface => epsilon,
        NoiseShape::Ball => epsilon * rng.random::<f64>().powf(1.0 / obs.len() as f64),
    };
    let scale = radius / norm(&z);
    Ok(obs.iter().zip(&z).map(|(o, zi)| o + scale * zi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ConstantPolicy, Mlp};
    use crate::rng::seeded;

    fn actor(seed: u64) -> Mlp {
        Mlp::random(&[20, 64, 64, 1], Activation::Tanh, &mut seeded(seed)).unwrap()
    }

    fn obs(seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn pg_loss_cases() {
        let net = actor(1);
        let o = obs(2);
        let zero = vec![0.0; 20];
        let mu = net.mean_action(&o).unwrap();
        assert_eq!(pg_loss(&net, &o, &zero, mu).unwrap(), 0.0);
        let delta = vec![0.01; 20];
        let shifted: Vec<f64> = o.iter().map(|v| v + 0.01).collect();
        let mu_d = net.mean_action(&shifted).unwrap();
        assert!((pg_loss(&net, &o, &delta, mu_d + 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!(pg_loss(&net, &o, &[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn pg_gradient_matches_finite_differences() {
        let net = actor(3);
        let o = obs(4);
        let delta = vec![0.003; 20];
        let (_, g) = pg_loss_and_grad(&net, &o, &delta, 2.5).unwrap();
        let h = 1e-6;
        for i in 0..20 {
            let mut p = delta.clone();
            let mut m = delta.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (pg_loss(&net, &o, &p, 2.5).unwrap() - pg_loss(&net, &o, &m, 2.5).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn bim_degenerate_budgets() {
        let net = actor(5);
        let o = obs(6);
        let none = AttackConfig::new(0.05, 0).unwrap();
        assert!(bim_perturb(&net, &o, 5.0, &none).unwrap().iter().all(|d| *d == 0.0));
        let empty = AttackConfig::new(0.0, 50).unwrap();
        assert!(bim_perturb(&net, &o, 5.0, &empty).unwrap().iter().all(|d| *d == 0.0));
    }

    #[test]
    fn bim_reduces_loss_and_respects_budget() {
        let cfg = AttackConfig::new(0.05, 50).unwrap();
        for seed in 0..20 {
            let net = actor(100 + seed);
            let o = obs(200 + seed);
            let target = 7.6 * (seed as f64 / 10.0 - 1.0);
            let d = bim_perturb(&net, &o, target, &cfg).unwrap();
            assert!(d.iter().all(|v| v.abs() <= 0.05));
            let before = pg_loss(&net, &o, &vec![0.0; 20], target).unwrap();
            let after = pg_loss(&net, &o, &d, target).unwrap();
            assert!(after <= before, "seed {seed}: {after} > {before}");
        }
    }

    #[test]
    fn ascend_sign_moves_away() {
        let net = actor(7);
        let o = obs(8);
        let mu = net.mean_action(&o).unwrap();
        let target = mu + 1.0;
        let cfg = AttackConfig {
            sign: BimSign::Ascend,
            ..AttackConfig::new(0.05, 50).unwrap()
        };
        let d = bim_perturb(&net, &o, target, &cfg).unwrap();
        assert!(pg_loss(&net, &o, &d, target).unwrap() >= 1.0);
    }

    #[test]
    fn probe_identity_and_single_direction() {
        let net = actor(9);
        let o = obs(10);
        let mut rng = seeded(11);
        let same = gradient_orthogonal_probe(&net, &o, &ProbeConfig::new(0.0, 0.0, 0.1).unwrap(), &mut rng).unwrap();
        assert_eq!(same, o);
        let basis = probe_basis(&net, &o, &mut rng).unwrap();
        let moved = basis.apply(&o, &ProbeConfig::new(0.07, 0.0, 0.1).unwrap()).unwrap();
        let step: Vec<f64> = moved.iter().zip(&o).map(|(a, b)| a - b).collect();
        assert!((norm(&step) - 0.07).abs() < 1e-12);
        let cos = dot(&step, &basis.grad) / (norm(&step) * norm(&basis.grad));
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_recovers_coefficients() {
        let net = actor(12);
        let o = obs(13);
        let mut rng = seeded(14);
        let cfg = ProbeConfig::new(-0.04, 0.06, 0.1).unwrap();
        let basis = probe_basis(&net, &o, &mut rng).unwrap();
        let moved = basis.apply(&o, &cfg).unwrap();
        let step: Vec<f64> = moved.iter().zip(&o).map(|(a, b)| a - b).collect();
        assert!((dot(&step, &basis.grad_unit) - cfg.beta1).abs() < 1e-10);
        assert!((dot(&step, &basis.orthogonal) - cfg.beta2).abs() < 1e-10);
    }

    #[test]
    fn probe_rejects_flat_policies_and_oversized_betas() {
        let mut rng = seeded(0);
        let cfg = ProbeConfig::new(0.05, 0.0, 0.1).unwrap();
        assert!(matches!(
            gradient_orthogonal_probe(&ConstantPolicy(1.0), &[0.0; 20], &cfg, &mut rng),
            Err(Error::DegenerateGradient(_))
        ));
        assert!(ProbeConfig::new(0.08, 0.08, 0.1).is_err());
    }

    #[test]
    fn sphere_noise_has_exact_radius() {
        let o = obs(15);
        let mut rng = seeded(16);
        assert_eq!(random_sphere_noise(&o, 0.0, &mut rng).unwrap(), o);
        for _ in 0..100 {
            let p = random_sphere_noise(&o, 0.05, &mut rng).unwrap();
            let d: Vec<f64> = p.iter().zip(&o).map(|(a, b)| a - b).collect();
            assert!((norm(&d) - 0.05).abs() < 1e-12);
            let b = random_noise(&o, 0.05, NoiseShape::Ball, &mut rng).unwrap();
            let d: Vec<f64> = b.iter().zip(&o).map(|(a, b)| a - b).collect();
            assert!(norm(&d) <= 0.05 + 1e-15);
        }
    }

    #[test]
    fn sphere_noise_is_centred() {
        // each component of a uniform direction has variance ε²/n
        let o = vec![0.0; 20];
        let mut rng = seeded(17);
        let n = 100_000;
        let mut sum = [0.0; 20];
        for _ in 0..n {
            for (s, v) in sum.iter_mut().zip(random_sphere_noise(&o, 0.05, &mut rng).unwrap()) {
                *s += v;
            }
        }
        let sigma = 0.05 / (20f64).sqrt() / (n as f64).sqrt();
        for s in sum {
            assert!((s / n as f64).abs() < 3.0 * sigma);
        }
    }
}
