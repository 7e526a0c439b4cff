//! Experiment orchestration: configuration, co-training schedule,
//! evaluation and the probe studies.

mod config;
mod eval;
mod probe;
mod run;

pub use config::{ExperimentConfig, Method, ProbeStudyConfig, ScheduleConfig};
pub use eval::{evaluate, AttackMode, EvalSetup, Metrics};
pub use probe::{grid_axis, noise_study, probe_grid, run_probe_study, sample_observations, GridRow, NoiseRow, ProbeKind};
pub use run::{
    evaluation_table, load_adversary, load_agent, read_csv, run_dir, run_experiment, run_igcarl, save_adversary,
    save_agent, summarize, write_csv, MetricsRow, RunArtifacts, SummaryRow,
};

pub use crate::nn::checkpoint::roundtrip as checkpoint_roundtrip;
