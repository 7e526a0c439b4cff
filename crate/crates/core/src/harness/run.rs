use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{train_adversary, AdversaryLogRow, AdversaryNets, SacAdversary};
use crate::agent::{train_agent, AgentLogRow, AgentNets, ConstrainedAgent, FrozenAdversary};
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::replay::ReplayBuffer;
use crate::rng::{mix, seeded, Rng};
use crate::sim::OBS_DIM;

use super::config::{ExperimentConfig, Method};
use super::eval::{evaluate, AttackMode, EvalSetup, Metrics};

/// Adversary training episodes draw their seeds from this offset upward so
/// they never reuse an agent episode's traffic.
const ADVERSARY_EPISODE_BASE: u64 = 1 << 31;

/// One line of the final evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub seed: u64,
    pub attack: String,
    pub epsilon: f64,
    pub sr: f64,
    pub cr: f64,
    pub timeout_rate: f64,
    pub de: f64,
    pub n_episodes: usize,
}

impl MetricsRow {
    pub fn new(method: Method, seed: u64, mode: AttackMode, m: &Metrics) -> Self {
        Self {
            method,
            seed,
            attack: mode.name().to_string(),
            epsilon: mode.epsilon(),
            sr: m.sr,
            cr: m.cr,
            timeout_rate: m.timeout_rate,
            de: m.de,
            n_episodes: m.n_episodes,
        }
    }
}

/// What a finished run leaves behind, besides the files.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub agent: AgentNets,
    pub adversary: AdversaryNets,
    pub agent_log: Vec<AgentLogRow>,
    pub adversary_log: Vec<AdversaryLogRow>,
    pub metrics: Vec<MetricsRow>,
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn save_agent(dir: impl AsRef<Path>, nets: &AgentNets) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    checkpoint::save(&nets.actor, dir.join("actor.ckpt"))?;
    checkpoint::save(&nets.q1, dir.join("agent_q1.ckpt"))?;
    checkpoint::save(&nets.q2, dir.join("agent_q2.ckpt"))?;
    checkpoint::save(&nets.q1_target, dir.join("agent_q1_target.ckpt"))?;
    checkpoint::save(&nets.q2_target, dir.join("agent_q2_target.ckpt"))
}

pub fn load_agent(dir: impl AsRef<Path>) -> Result<AgentNets> {
    let dir = dir.as_ref();
    Ok(AgentNets {
        actor: checkpoint::load(dir.join("actor.ckpt"))?,
        q1: checkpoint::load(dir.join("agent_q1.ckpt"))?,
        q2: checkpoint::load(dir.join("agent_q2.ckpt"))?,
        q1_target: checkpoint::load(dir.join("agent_q1_target.ckpt"))?,
        q2_target: checkpoint::load(dir.join("agent_q2_target.ckpt"))?,
    })
}

pub fn save_adversary(dir: impl AsRef<Path>, nets: &AdversaryNets) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    checkpoint::save(&nets.policy, dir.join("adversary_policy.ckpt"))?;
    checkpoint::save(&nets.q1, dir.join("adversary_q1.ckpt"))?;
    checkpoint::save(&nets.q2, dir.join("adversary_q2.ckpt"))?;
    checkpoint::save(&nets.q1_target, dir.join("adversary_q1_target.ckpt"))?;
    checkpoint::save(&nets.q2_target, dir.join("adversary_q2_target.ckpt"))?;
    checkpoint::save(&nets.value, dir.join("adversary_value.ckpt"))
}

pub fn load_adversary(dir: impl AsRef<Path>, alpha: f64) -> Result<AdversaryNets> {
    let dir = dir.as_ref();
    Ok(AdversaryNets {
        policy: checkpoint::load(dir.join("adversary_policy.ckpt"))?,
        q1: checkpoint::load(dir.join("adversary_q1.ckpt"))?,
        q2: checkpoint::load(dir.join("adversary_q2.ckpt"))?,
        q1_target: checkpoint::load(dir.join("adversary_q1_target.ckpt"))?,
        q2_target: checkpoint::load(dir.join("adversary_q2_target.ckpt"))?,
        value: checkpoint::load(dir.join("adversary_value.ckpt"))?,
        alpha,
    })
}

/// Evaluates `agent` at every configured budget: no attack for 0, BIM from
/// `adversary` otherwise.
pub fn evaluation_table(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    agent: &AgentNets,
    adversary: &AdversaryNets,
) -> Result<Vec<MetricsRow>> {
    let setup = EvalSetup {
        sim: &cfg.sim,
        attack: &cfg.attack,
        noise_shape: cfg.probe.noise_shape,
        episodes: cfg.eval_episodes,
    };
    cfg.eval_epsilons
        .iter()
        .map(|&eps| {
            let mode = if eps == 0.0 { AttackMode::None } else { AttackMode::Bim(eps) };
            let m = evaluate(agent, mode, Some(adversary), &setup)?;
            Ok(MetricsRow::new(method, seed, mode, &m))
        })
        .collect()
}

struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    rng: Rng,
    agent: ConstrainedAgent,
    agent_buf: ReplayBuffer<crate::replay::Transition>,
    adversary: SacAdversary,
    adversary_buf: ReplayBuffer<crate::replay::Transition>,
    agent_episode: u64,
    adversary_episode: u64,
    agent_log: Vec<AgentLogRow>,
    adversary_log: Vec<AdversaryLogRow>,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a ExperimentConfig, method: Method, seed: u64) -> Result<Self> {
        let mut rng = seeded(mix(seed));
        let agent = ConstrainedAgent::new(OBS_DIM, method.agent_config(&cfg.agent), &mut rng)?;
        let adversary = SacAdversary::new(OBS_DIM, cfg.sac.clone(), &mut rng)?;
        Ok(Self {
            cfg,
            seed,
            rng,
            agent_buf: ReplayBuffer::new(cfg.agent.buffer_capacity)?,
            adversary_buf: ReplayBuffer::new(cfg.sac.buffer_capacity)?,
            agent,
            adversary,
            agent_episode: 0,
            adversary_episode: ADVERSARY_EPISODE_BASE,
            agent_log: Vec::new(),
            adversary_log: Vec::new(),
        })
    }

    fn agent_phase(&mut self, episodes: u64, attacked: bool) -> Result<()> {
        let range = self.agent_episode..self.agent_episode + episodes;
        let frozen = attacked.then(|| FrozenAdversary::new(&self.adversary.nets, &self.cfg.attack));
        let rows = train_agent(
            &mut self.agent,
            &mut self.agent_buf,
            frozen.as_ref(),
            &self.cfg.sim,
            range,
            self.seed,
            &mut self.rng,
        )?;
        self.agent_episode += episodes;
        self.agent_log.extend(rows);
        Ok(())
    }

    fn adversary_phase(&mut self, episodes: u64) -> Result<()> {
        let range = self.adversary_episode..self.adversary_episode + episodes;
        let target = self.agent.nets.clone();
        let rows = train_adversary(
            &mut self.adversary,
            &mut self.adversary_buf,
            &target,
            &self.cfg.sim,
            &self.cfg.attack,
            range,
            self.seed,
            &mut self.rng,
        )?;
        self.adversary_episode += episodes;
        self.adversary_log.extend(rows);
        Ok(())
    }

    /// The full schedule for one method.
    fn run(&mut self, method: Method) -> Result<()> {
        let s = &self.cfg.schedule;
        let (total, pretrain, agent_phase, adv_phase) =
            (s.agent_episodes, s.pretrain_episodes, s.agent_phase, s.adversary_phase);
        let final_adv = s.final_adversary_episodes;
        if method == Method::Clean {
            self.agent_phase(total, false)?;
            // same adversary budget as the co-trained methods, all of it
            // against the final agent
            let rounds = (total - pretrain).div_ceil(agent_phase.max(1));
            return self.adversary_phase(rounds * adv_phase + final_adv);
        }
        self.agent_phase(pretrain, false)?;
        while self.agent_episode < total {
            self.adversary_phase(adv_phase)?;
            let n = agent_phase.min(total - self.agent_episode);
            self.agent_phase(n, true)?;
        }
        self.adversary_phase(final_adv)
    }

    fn dump_diagnostic(&self, dir: &Path, err: &Error) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut text = format!(
            "error: {err}\nagent episode: {}\nadversary episode: {}\nlambda1: {}\nlambda2: {}\n",
            self.agent_episode,
            self.adversary_episode - ADVERSARY_EPISODE_BASE,
            self.agent.lagrange.lambda1,
            self.agent.lagrange.lambda2
        );
        for r in self.agent_log.iter().rev().take(5) {
            text.push_str(&format!("{r:?}\n"));
        }
        for r in self.adversary_log.iter().rev().take(5) {
            text.push_str(&format!("{r:?}\n"));
        }
        fs::write(dir.join("diagnostic.txt"), text)?;
        write_csv(dir.join("agent_log.csv"), &self.agent_log)?;
        write_csv(dir.join("adversary_log.csv"), &self.adversary_log)
    }
}

/// Directory for one (method, seed) run under `out`.
pub fn run_dir(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join(method.name()).join(format!("seed_{seed}"))
}

/// Trains one method for one seed, evaluates it, and writes logs,
/// checkpoints and `metrics.csv` to `run_dir(out, method, seed)`.
///
/// A non-finite loss stops the run, leaves `diagnostic.txt` with the logs so
/// far, and writes no checkpoint.
pub fn run_igcarl(cfg: &ExperimentConfig, method: Method, seed: u64, out: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dir = run_dir(out, method, seed);
    fs::create_dir_all(&dir)?;
    let mut trainer = Trainer::new(cfg, method, seed)?;
    if let Err(e) = trainer.run(method) {
        trainer.dump_diagnostic(&dir, &e)?;
        return Err(e);
    }
    save_agent(&dir, &trainer.agent.nets)?;
    save_adversary(&dir, &trainer.adversary.nets)?;
    write_csv(dir.join("agent_log.csv"), &trainer.agent_log)?;
    write_csv(dir.join("adversary_log.csv"), &trainer.adversary_log)?;
    let metrics = evaluation_table(cfg, method, seed, &trainer.agent.nets, &trainer.adversary.nets)?;
    write_csv(dir.join("metrics.csv"), &metrics)?;
    Ok(RunArtifacts {
        dir,
        agent: trainer.agent.nets,
        adversary: trainer.adversary.nets,
        agent_log: trainer.agent_log,
        adversary_log: trainer.adversary_log,
        metrics,
    })
}

/// Mean and sample standard deviation across seeds for one table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub attack: String,
    pub epsilon: f64,
    pub seeds: usize,
    pub sr_mean: f64,
    pub sr_std: f64,
    pub cr_mean: f64,
    pub cr_std: f64,
    pub de_mean: f64,
    pub de_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, String, f64)> = Vec::new();
    for r in rows {
        let k = (r.method, r.attack.clone(), r.epsilon);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, attack, epsilon)| {
            let cell: Vec<&MetricsRow> = rows
                .iter()
                .filter(|r| r.method == method && r.attack == attack && r.epsilon == epsilon)
                .collect();
            let col = |f: fn(&MetricsRow) -> f64| mean_std(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (sr_mean, sr_std) = col(|r| r.sr);
            let (cr_mean, cr_std) = col(|r| r.cr);
            let (de_mean, de_std) = col(|r| r.de);
            SummaryRow {
                method,
                attack,
                epsilon,
                seeds: cell.len(),
                sr_mean,
                sr_std,
                cr_mean,
                cr_std,
                de_mean,
                de_std,
            }
        })
        .collect()
}

/// Runs every configured seed for `cfg.method` and writes `summary.csv`
/// next to the per-seed directories.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricsRow>> {
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("{} seed {seed}", cfg.method.name());
        all.extend(run_igcarl(cfg, cfg.method, seed, out)?.metrics);
    }
    let dir = out.join(cfg.method.name());
    write_csv(dir.join("metrics.csv"), &all)?;
    write_csv(dir.join("summary.csv"), &summarize(&all))?;
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let m = Metrics {
            sr: 0.0,
            cr: 0.0,
            timeout_rate: 1.0,
            de: 0.0,
            n_episodes: 1,
        };
        let rows: Vec<MetricsRow> = [0.5, 0.7, 0.9]
            .iter()
            .enumerate()
            .map(|(i, sr)| MetricsRow {
                sr: *sr,
                ..MetricsRow::new(Method::Igcarl, i as u64, AttackMode::Bim(0.05), &m)
            })
            .collect();
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert!((s[0].sr_mean - 0.7).abs() < 1e-12);
        assert!((s[0].sr_std - 0.2).abs() < 1e-12);
        assert_eq!(s[0].seeds, 3);
    }

    #[test]
    fn csv_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let m = Metrics {
            sr: 0.1 + 0.2,
            cr: 1.0 / 3.0,
            timeout_rate: 1.0 - 0.1 - 0.2 - 1.0 / 3.0,
            de: 7.123456789012345,
            n_episodes: 200,
        };
        let rows = vec![MetricsRow::new(Method::Clean, 2, AttackMode::Bim(0.03), &m)];
        let path = dir.path().join("m.csv");
        write_csv(&path, &rows).unwrap();
        let back: Vec<MetricsRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
    }
}
