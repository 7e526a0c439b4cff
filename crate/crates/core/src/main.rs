use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use igcarl::adversary::{train_adversary, SacAdversary};
use igcarl::agent::{train_agent, ConstrainedAgent, FrozenAdversary};
use igcarl::harness::{
    self, evaluate, load_adversary, load_agent, run_probe_study, save_adversary, save_agent, write_csv, AttackMode,
    EvalSetup, ExperimentConfig, Method, MetricsRow, ProbeKind,
};
use igcarl::replay::ReplayBuffer;
use igcarl::rng::{mix, seeded};
use igcarl::sim::OBS_DIM;
use igcarl::Result;

#[derive(Parser)]
#[command(name = "igcarl", version, about = "Adversarial training and robustness probing for a left-turn driving agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an adversary against a frozen agent checkpoint.
    TrainAdversary {
        #[command(flatten)]
        common: Common,
        /// Directory holding the agent checkpoints.
        #[arg(long)]
        agent: PathBuf,
        #[arg(long, default_value_t = 500)]
        episodes: u64,
        /// Overrides the attack budget from the config.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Train the agent, clean or against a frozen adversary.
    TrainAgent {
        #[command(flatten)]
        common: Common,
        /// Directory holding adversary checkpoints; omit for clean training.
        #[arg(long)]
        adversary: Option<PathBuf>,
        #[arg(long, default_value_t = 3000)]
        episodes: u64,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Full alternating co-training, one run per configured seed.
    RunIgcarl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        only_seed: bool,
    },
    /// Evaluate an agent checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        agent: PathBuf,
        /// Needed for `--attack bim`.
        #[arg(long)]
        adversary: Option<PathBuf>,
        #[arg(long, default_value = "none")]
        attack: String,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
    },
    /// Gradient/orthogonal probe grid around sampled observations.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        agent: PathBuf,
    },
    /// Action offsets under random noise.
    NoiseStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainAdversary {
            common,
            agent,
            episodes,
            epsilon,
        } => {
            let cfg = common.load()?;
            let attack = cfg.attack.with_epsilon(epsilon.unwrap_or(cfg.attack.epsilon));
            attack.validate()?;
            let agent = load_agent(&agent)?;
            let mut rng = seeded(mix(common.seed));
            let mut adv = SacAdversary::new(OBS_DIM, cfg.sac.clone(), &mut rng)?;
            let mut buf = ReplayBuffer::new(cfg.sac.buffer_capacity)?;
            let log = train_adversary(&mut adv, &mut buf, &agent, &cfg.sim, &attack, 0..episodes, common.seed, &mut rng)?;
            save_adversary(&common.out, &adv.nets)?;
            write_csv(common.out.join("adversary_log.csv"), &log)?;
            let hits = log.iter().filter(|r| r.collision).count();
            println!("adversary trained: {hits}/{episodes} episodes ended in a collision");
        }
        Command::TrainAgent {
            common,
            adversary,
            episodes,
            epsilon,
            method,
        } => {
            let cfg = common.load()?;
            let attack = cfg.attack.with_epsilon(epsilon.unwrap_or(cfg.attack.epsilon));
            attack.validate()?;
            let method = method.unwrap_or(cfg.method);
            let adv_nets = adversary.map(|d| load_adversary(d, cfg.sac.alpha)).transpose()?;
            let frozen = adv_nets.as_ref().map(|n| FrozenAdversary::new(n, &attack));
            let mut rng = seeded(mix(common.seed));
            let mut agent = ConstrainedAgent::new(OBS_DIM, method.agent_config(&cfg.agent), &mut rng)?;
            let mut buf = ReplayBuffer::new(cfg.agent.buffer_capacity)?;
            let log = train_agent(&mut agent, &mut buf, frozen.as_ref(), &cfg.sim, 0..episodes, common.seed, &mut rng)?;
            save_agent(&common.out, &agent.nets)?;
            write_csv(common.out.join("agent_log.csv"), &log)?;
            let tail = &log[log.len().saturating_sub(100)..];
            let sr = tail.iter().filter(|r| r.success).count() as f64 / tail.len().max(1) as f64;
            println!("agent trained: success rate over the last {} episodes {sr:.3}", tail.len());
        }
        Command::RunIgcarl {
            common,
            method,
            only_seed,
        } => {
            let mut cfg = common.load()?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if only_seed {
                cfg.seeds = vec![common.seed];
            }
            let rows = harness::run_experiment(&cfg, &common.out)?;
            print_table(&rows);
        }
        Command::Evaluate {
            common,
            agent,
            adversary,
            attack,
            epsilon,
        } => {
            let cfg = common.load()?;
            let mode = AttackMode::parse(&attack, epsilon)?;
            let agent = load_agent(&agent)?;
            let adv = adversary.map(|d| load_adversary(d, cfg.sac.alpha)).transpose()?;
            let setup = EvalSetup {
                sim: &cfg.sim,
                attack: &cfg.attack,
                noise_shape: cfg.probe.noise_shape,
                episodes: cfg.eval_episodes,
            };
            let m = evaluate(&agent, mode, adv.as_ref(), &setup)?;
            let rows = vec![MetricsRow::new(cfg.method, common.seed, mode, &m)];
            std::fs::create_dir_all(&common.out)?;
            write_csv(common.out.join("evaluation.csv"), &rows)?;
            print_table(&rows);
        }
        Command::Probe { common, agent } => {
            let cfg = common.load()?;
            let agent = load_agent(&agent)?;
            let n = run_probe_study(&agent, ProbeKind::Grid, &cfg.sim, &cfg.probe, common.seed, &common.out)?;
            println!("wrote {n} grid rows to {}", common.out.join("probe_grid.csv").display());
        }
        Command::NoiseStudy {
            common,
            agent,
            epsilon,
        } => {
            let mut cfg = common.load()?;
            if let Some(e) = epsilon {
                cfg.probe.noise_epsilon = e;
            }
            cfg.validate()?;
            let agent = load_agent(&agent)?;
            let n = run_probe_study(&agent, ProbeKind::Noise, &cfg.sim, &cfg.probe, common.seed, &common.out)?;
            println!("wrote {n} noise rows to {}", common.out.join("noise_study.csv").display());
        }
    }
    Ok(())
}

fn print_table(rows: &[MetricsRow]) {
    println!("{:<14} {:>5} {:<7} {:>6} {:>6} {:>6} {:>7}", "method", "seed", "attack", "eps", "SR", "CR", "DE");
    for r in rows {
        println!(
            "{:<14} {:>5} {:<7} {:>6.3} {:>6.3} {:>6.3} {:>7.3}",
            r.method.name(),
            r.seed,
            r.attack,
            r.epsilon,
            r.sr,
            r.cr,
            r.de
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
