use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::attack::{probe_basis, random_noise, ProbeConfig};
use crate::error::{Error, Result};
use crate::nn::DeterministicPolicy;
use crate::rng::{eval_episode_seed, mix, seeded};
use crate::sim::{self, observe, Observation, SimConfig};

use super::config::ProbeStudyConfig;
use super::run::write_csv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub obs_id: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub l2_norm: f64,
    pub action_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub obs_id: usize,
    pub draw_id: usize,
    pub action_offset: f64,
}

/// Clean observations visited by the policy on evaluation seeds, `n` of
/// them picked at random from the first `10·n` steps.
pub fn sample_observations(
    policy: &impl DeterministicPolicy,
    sim_cfg: &SimConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Observation>> {
    let mut pool = Vec::new();
    let mut episode = 0;
    while pool.len() < 10 * n {
        let mut state = sim::reset(sim_cfg, eval_episode_seed(episode))?;
        while !state.done && pool.len() < 10 * n {
            let obs = observe(&state, sim_cfg);
            pool.push(obs);
            state.step(sim_cfg, policy.mean_action(obs.as_slice())?)?;
        }
        episode += 1;
    }
    let mut rng = seeded(mix(seed));
    let mut picked: Vec<usize> = sample(&mut rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i]).collect())
}

/// Grid axis over `[−eps_max, eps_max]` with `points` entries.
pub fn grid_axis(eps_max: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| -eps_max + 2.0 * eps_max * i as f64 / (points - 1) as f64)
        .collect()
}

/// Sweeps `(β1, β2)` along the gradient and a random orthogonal direction
/// at each observation, skipping combinations outside the ℓ2 ball.
/// Observations where the gradient vanishes are skipped with a warning.
pub fn probe_grid(
    policy: &impl DeterministicPolicy,
    observations: &[Observation],
    cfg: &ProbeStudyConfig,
    seed: u64,
) -> Result<Vec<GridRow>> {
    let axis = grid_axis(cfg.eps_max, cfg.grid);
    let mut rows = Vec::new();
    for (id, obs) in observations.iter().enumerate() {
        let mut rng = seeded(mix(seed ^ mix(id as u64)));
        let basis = match probe_basis(policy, obs.as_slice(), &mut rng) {
            Ok(b) => b,
            Err(Error::DegenerateGradient(norm)) => {
                log::warn!("observation {id}: gradient norm {norm:e}, skipped");
                continue;
            }
            Err(e) => return Err(e),
        };
        let clean = policy.mean_action(obs.as_slice())?;
        for &b1 in &axis {
            for &b2 in &axis {
                let Ok(pc) = ProbeConfig::new(b1, b2, cfg.eps_max) else {
                    continue;
                };
                let moved = basis.apply(obs.as_slice(), &pc)?;
                let l2 = moved
                    .iter()
                    .zip(obs.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                rows.push(GridRow {
                    obs_id: id,
                    beta1: b1,
                    beta2: b2,
                    l2_norm: l2,
                    action_offset: policy.mean_action(&moved)? - clean,
                });
            }
        }
    }
    Ok(rows)
}

/// Action offsets under random noise of radius `cfg.noise_epsilon`.
pub fn noise_study(
    policy: &impl DeterministicPolicy,
    observations: &[Observation],
    cfg: &ProbeStudyConfig,
    seed: u64,
) -> Result<Vec<NoiseRow>> {
    let mut rows = Vec::with_capacity(observations.len() * cfg.noise_draws);
    for (id, obs) in observations.iter().enumerate() {
        let mut rng = seeded(mix(seed ^ mix(id as u64) ^ 0x6E6F_6973_65));
        let clean = policy.mean_action(obs.as_slice())?;
        for draw in 0..cfg.noise_draws {
            let delta = random_noise(obs.as_slice(), cfg.noise_epsilon, cfg.noise_shape, &mut rng)?;
            rows.push(NoiseRow {
                obs_id: id,
                draw_id: draw,
                action_offset: policy.mean_action(obs.perturbed(&delta).as_slice())? - clean,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    Grid,
    Noise,
}

/// Samples observations from a rollout and writes `probe_grid.csv` or
/// `noise_study.csv` into `out`.
pub fn run_probe_study(
    policy: &impl DeterministicPolicy,
    kind: ProbeKind,
    sim_cfg: &SimConfig,
    cfg: &ProbeStudyConfig,
    seed: u64,
    out: &Path,
) -> Result<usize> {
    std::fs::create_dir_all(out)?;
    let observations = sample_observations(policy, sim_cfg, cfg.observations, seed)?;
    match kind {
        ProbeKind::Grid => {
            let rows = probe_grid(policy, &observations, cfg, seed)?;
            write_csv(out.join("probe_grid.csv"), &rows)?;
            Ok(rows.len())
        }
        ProbeKind::Noise => {
            let rows = noise_study(policy, &observations, cfg, seed)?;
            write_csv(out.join("noise_study.csv"), &rows)?;
            Ok(rows.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{standard_sizes, Activation, ConstantPolicy, Mlp};
    use crate::sim::OBS_DIM;

    fn net() -> Mlp {
        Mlp::random(&standard_sizes(OBS_DIM, 1), Activation::Tanh, &mut seeded(3)).unwrap()
    }

    #[test]
    fn grid_respects_the_ball_and_is_pure() {
        let policy = net();
        let cfg = ProbeStudyConfig::default();
        let obs = sample_observations(&policy, &SimConfig::default(), 5, 1).unwrap();
        let rows = probe_grid(&policy, &obs, &cfg, 7).unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.l2_norm <= 0.1 * (1.0 + 1e-12)));
        // 11x11 grid inside a disc of radius 0.1: the corners drop out
        assert!(rows.len() < 5 * 121);
        assert_eq!(rows, probe_grid(&policy, &obs, &cfg, 7).unwrap());
        let origin = rows.iter().find(|r| r.beta1 == 0.0 && r.beta2 == 0.0).unwrap();
        assert_eq!(origin.action_offset, 0.0);
    }

    #[test]
    fn constant_policy_has_no_offsets_and_degenerate_gradients_skip() {
        let cfg = ProbeStudyConfig {
            noise_draws: 20,
            ..ProbeStudyConfig::default()
        };
        let obs = sample_observations(&ConstantPolicy(2.0), &SimConfig::default(), 3, 1).unwrap();
        let noise = noise_study(&ConstantPolicy(2.0), &obs, &cfg, 1).unwrap();
        assert_eq!(noise.len(), 60);
        assert!(noise.iter().all(|r| r.action_offset == 0.0));
        assert!(probe_grid(&ConstantPolicy(2.0), &obs, &cfg, 1).unwrap().is_empty());
    }

    #[test]
    fn axis_hits_both_ends_and_zero() {
        let a = grid_axis(0.1, 11);
        assert_eq!(a.len(), 11);
        assert_eq!(a[0], -0.1);
        assert_eq!(a[5], 0.0);
        assert!((a[10] - 0.1).abs() < 1e-15);
    }
}
