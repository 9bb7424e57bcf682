//! Experiment orchestration: configs, splits, multi-seed runs and reports.

mod config;
mod report;
mod run;

pub use config::{ExperimentConfig, PretrainStage, SplitProtocol, Strategy};
pub use report::{emit_report, read_csv, CsvRow};
pub use run::{
    adapt_config, build_splits, finetune_config, initial_model, mean_std, run_ablation, run_experiment,
    run_experiment_with_logs, with_workers, Aggregate, RunReport, SeedEval, SeedLogs, Splits, StrategyReport,
    ABLATION_ADAPT, ABLATION_SSL,
};
