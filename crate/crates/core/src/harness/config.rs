use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::SacConfig;
use crate::agent::{AgentConfig, LagrangeMode};
use crate::attack::{AttackConfig, NoiseShape};
use crate::error::{Error, Result};
use crate::sim::SimConfig;

/// Training recipe being run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Co-trained adversary with live Lagrange multipliers.
    #[default]
    Igcarl,
    /// Same co-training with both multipliers frozen at zero.
    Unconstrained,
    /// No adversary during training.
    Clean,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Igcarl => "igcarl",
            Method::Unconstrained => "unconstrained",
            Method::Clean => "clean",
        }
    }

    /// Agent config for this method derived from the shared one.
    pub fn agent_config(self, base: &AgentConfig) -> AgentConfig {
        match self {
            Method::Igcarl => base.clone(),
            Method::Unconstrained | Method::Clean => AgentConfig {
                lagrange: LagrangeMode::Frozen,
                lambda1_init: 0.0,
                lambda2_init: 0.0,
                ..base.clone()
            },
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "igcarl" => Ok(Method::Igcarl),
            "unconstrained" => Ok(Method::Unconstrained),
            "clean" => Ok(Method::Clean),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Episode budget and how it is split between the two players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Total agent training episodes.
    pub agent_episodes: u64,
    /// Unattacked agent episodes before the first adversary phase.
    pub pretrain_episodes: u64,
    /// Agent episodes per alternation round.
    pub agent_phase: u64,
    /// Adversary episodes per alternation round.
    pub adversary_phase: u64,
    /// Adversary episodes against the final frozen agent, before evaluation.
    pub final_adversary_episodes: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            agent_episodes: 3000,
            pretrain_episodes: 1000,
            agent_phase: 250,
            adversary_phase: 150,
            final_adversary_episodes: 600,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pretrain_episodes > self.agent_episodes {
            return Err(Error::Config("pretrain episodes exceed the agent budget".into()));
        }
        if self.agent_phase == 0 && self.pretrain_episodes < self.agent_episodes {
            return Err(Error::Config("agent_phase must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeStudyConfig {
    /// Clean observations sampled from a rollout.
    pub observations: usize,
    pub eps_max: f64,
    /// Grid points per axis over `[−eps_max, eps_max]`.
    pub grid: usize,
    pub noise_epsilon: f64,
    pub noise_draws: usize,
    pub noise_shape: NoiseShape,
}

impl Default for ProbeStudyConfig {
    fn default() -> Self {
        Self {
            observations: 5,
            eps_max: 0.1,
            grid: 11,
            noise_epsilon: 0.05,
            noise_draws: 1000,
            noise_shape: NoiseShape::Surface,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    /// Budgets in the final table; 0 means no attack.
    pub eval_epsilons: Vec<f64>,
    pub output_dir: PathBuf,
    pub sim: SimConfig,
    pub attack: AttackConfig,
    pub sac: SacConfig,
    pub agent: AgentConfig,
    pub schedule: ScheduleConfig,
    pub probe: ProbeStudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Igcarl,
            seeds: vec![0, 1, 2],
            eval_episodes: 200,
            eval_epsilons: vec![0.0, 0.01, 0.03, 0.05],
            output_dir: PathBuf::from("runs"),
            sim: SimConfig::default(),
            attack: AttackConfig::default(),
            sac: SacConfig::default(),
            agent: AgentConfig::default(),
            schedule: ScheduleConfig::default(),
            probe: ProbeStudyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.attack.validate()?;
        self.sac.validate()?;
        self.agent.validate()?;
        self.schedule.validate()?;
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.eval_epsilons.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Config("evaluation budgets must be >= 0".into()));
        }
        if !(self.probe.eps_max > 0.0) || self.probe.grid < 2 || !(self.probe.noise_epsilon >= 0.0) {
            return Err(Error::Config("probe study needs eps_max > 0, grid >= 2, noise_epsilon >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::from_toml_str("method = \"clean\"\nseeds = [4]\n[sim]\narrival_prob = 0.2\n").unwrap();
        assert_eq!(cfg.method, Method::Clean);
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.sim.arrival_prob, 0.2);
        assert_eq!(cfg.sac.batch_size, 128);
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(matches!(ExperimentConfig::from_toml_str("eval_episodes = 0"), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml_str("typo = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[schedule]\nagent_episodes = 5\npretrain_episodes = 9").is_err());
    }

    #[test]
    fn baselines_freeze_multipliers() {
        let base = AgentConfig {
            lambda1_init: 0.3,
            ..AgentConfig::default()
        };
        let cfg = Method::Unconstrained.agent_config(&base);
        assert_eq!(cfg.lagrange, LagrangeMode::Frozen);
        assert_eq!((cfg.lambda1_init, cfg.lambda2_init), (0.0, 0.0));
        assert_eq!(Method::Igcarl.agent_config(&base), base);
    }
}
