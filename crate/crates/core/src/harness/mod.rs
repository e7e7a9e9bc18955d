//! Experiment orchestration: configs, seeded end-to-end runs, sweeps,
//! ablations and report files.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ExperimentConfig, SweepConfig, TargetSide};
pub use experiment::{run_experiment_in_memory, run_on_world, Aggregate, ExperimentResult, Prepared, RunRecord};
pub use report::{run_ablation, run_experiment, run_experiment_on, run_sweep, Arm, Written};
