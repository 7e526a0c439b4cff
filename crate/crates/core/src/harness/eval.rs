use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryNets;
use crate::attack::{bim_perturb, random_noise, AttackConfig, NoiseShape};
use crate::error::{Error, Result};
use crate::nn::DeterministicPolicy;
use crate::rng::{eval_episode_seed, mix, seeded};
use crate::sim::{self, observe, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackMode {
    None,
    /// BIM toward the adversary's deterministic action at this budget.
    Bim(f64),
    /// Uniform noise at this radius.
    Random(f64),
}

impl AttackMode {
    pub fn name(&self) -> &'static str {
        match self {
            AttackMode::None => "none",
            AttackMode::Bim(_) => "bim",
            AttackMode::Random(_) => "random",
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            AttackMode::None => 0.0,
            AttackMode::Bim(e) | AttackMode::Random(e) => *e,
        }
    }

    /// Builds a mode from a CLI-style name; `none` ignores `epsilon`.
    pub fn parse(name: &str, epsilon: f64) -> Result<Self> {
        match name {
            "none" => Ok(AttackMode::None),
            "bim" => Ok(AttackMode::Bim(epsilon)),
            "random" => Ok(AttackMode::Random(epsilon)),
            other => Err(Error::Config(format!("unknown attack {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sr: f64,
    pub cr: f64,
    pub timeout_rate: f64,
    /// Mean over episodes of the per-episode mean speed, m/s.
    pub de: f64,
    pub n_episodes: usize,
}

/// What an evaluation needs besides the policy.
#[derive(Debug, Clone)]
pub struct EvalSetup<'a> {
    pub sim: &'a SimConfig,
    /// Iteration count and sign for BIM; the budget comes from the mode.
    pub attack: &'a AttackConfig,
    pub noise_shape: NoiseShape,
    pub episodes: usize,
}

/// Runs `setup.episodes` evaluation episodes with the policy's mean action.
pub fn evaluate(
    policy: &impl DeterministicPolicy,
    mode: AttackMode,
    adversary: Option<&AdversaryNets>,
    setup: &EvalSetup<'_>,
) -> Result<Metrics> {
    if !(mode.epsilon() >= 0.0) {
        return Err(Error::Config(format!("attack budget must be >= 0, got {}", mode.epsilon())));
    }
    if setup.episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let attack = setup.attack.with_epsilon(mode.epsilon());
    let (mut success, mut collision, mut de_sum) = (0usize, 0usize, 0.0);
    for i in 0..setup.episodes as u64 {
        let seed = eval_episode_seed(i);
        let mut noise_rng = seeded(mix(seed ^ 0x6E6F_6973_65));
        let mut state = sim::reset(setup.sim, seed)?;
        let (mut speed_sum, mut steps) = (0.0, 0usize);
        let (mut hit, mut reached) = (false, false);
        while !state.done {
            let obs = observe(&state, setup.sim);
            let seen = match mode {
                AttackMode::None => obs,
                AttackMode::Bim(_) => {
                    let adv = adversary.ok_or_else(|| Error::Config("BIM evaluation needs an adversary snapshot".into()))?;
                    let target = adv.deterministic_action(obs.as_slice())?;
                    obs.perturbed(&bim_perturb(policy, obs.as_slice(), target, &attack)?)
                }
                AttackMode::Random(eps) => {
                    obs.perturbed(&random_noise(obs.as_slice(), eps, setup.noise_shape, &mut noise_rng)?)
                }
            };
            let outcome = state.step(setup.sim, policy.mean_action(seen.as_slice())?)?;
            speed_sum += outcome.ego_speed;
            steps += 1;
            hit |= outcome.collision;
            reached |= outcome.reached_goal;
        }
        if hit {
            collision += 1;
        } else if reached {
            success += 1;
        }
        de_sum += speed_sum / steps.max(1) as f64;
    }
    let n = setup.episodes as f64;
    Ok(Metrics {
        sr: success as f64 / n,
        cr: collision as f64 / n,
        timeout_rate: (setup.episodes - success - collision) as f64 / n,
        de: de_sum / n,
        n_episodes: setup.episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConstantPolicy;
    use crate::sim::OBS_DIM;

    fn setup<'a>(sim: &'a SimConfig, attack: &'a AttackConfig, episodes: usize) -> EvalSetup<'a> {
        EvalSetup {
            sim,
            attack,
            noise_shape: NoiseShape::Surface,
            episodes,
        }
    }

    #[test]
    fn empty_road_is_always_a_success() {
        let sim = SimConfig {
            arrival_prob: 0.0,
            ..SimConfig::default()
        };
        let attack = AttackConfig::default();
        let m = evaluate(&ConstantPolicy(4.0), AttackMode::None, None, &setup(&sim, &attack, 20)).unwrap();
        assert_eq!((m.sr, m.cr, m.timeout_rate), (1.0, 0.0, 0.0));
        assert!(m.de > 0.0 && m.de <= sim.v_max);
    }

    #[test]
    fn full_brake_times_out() {
        let sim = SimConfig::default();
        let attack = AttackConfig::default();
        let m = evaluate(&ConstantPolicy(-7.6), AttackMode::None, None, &setup(&sim, &attack, 20)).unwrap();
        assert_eq!((m.sr, m.cr, m.timeout_rate), (0.0, 0.0, 1.0));
        assert_eq!(m.de, 0.0);
    }

    #[test]
    fn bim_without_snapshot_is_a_config_error() {
        let sim = SimConfig::default();
        let attack = AttackConfig::default();
        let r = evaluate(&ConstantPolicy(1.0), AttackMode::Bim(0.05), None, &setup(&sim, &attack, 1));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn rates_partition_and_runs_repeat() {
        let sim = SimConfig::default();
        let attack = AttackConfig::new(0.05, 3).unwrap();
        let adv = AdversaryNets::new(OBS_DIM, 0.1, &mut seeded(1)).unwrap();
        let policy = crate::nn::Mlp::random(&crate::nn::standard_sizes(OBS_DIM, 1), Default::default(), &mut seeded(2))
            .unwrap();
        for mode in [AttackMode::None, AttackMode::Bim(0.05), AttackMode::Random(0.05)] {
            let s = setup(&sim, &attack, 15);
            let a = evaluate(&policy, mode, Some(&adv), &s).unwrap();
            let b = evaluate(&policy, mode, Some(&adv), &s).unwrap();
            assert_eq!(a, b);
            assert!((a.sr + a.cr + a.timeout_rate - 1.0).abs() < 1e-12);
            assert!(a.sr + a.cr <= 1.0);
            assert!((0.0..=sim.v_max).contains(&a.de));
        }
    }

    #[test]
    fn parses_modes() {
        assert_eq!(AttackMode::parse("bim", 0.03).unwrap(), AttackMode::Bim(0.03));
        assert_eq!(AttackMode::parse("none", 0.03).unwrap().epsilon(), 0.0);
        assert!(AttackMode::parse("fgsm", 0.03).is_err());
    }
}
