//! Config-driven experiments behind the command-line tool.

mod commands;
mod config;
mod experiments;

pub use commands::*;
pub use config::{DataConfig, ExperimentConfig, OptimConfig};
pub use experiments::{
    baseline_set, evaluate_set, generic_residual, mean_dice, octahedral_residual, param_report, ratio_sweep,
    rotate_field_resampled, sample_efficiency, train_config, train_model, worker_count, Dataset, EfficiencyRow,
    OctahedralResidual, ParamReport, SweepRow,
};
