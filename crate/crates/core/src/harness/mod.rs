//! Config-driven experiments: run, compare, ablate.

mod ablate;
mod compare;
mod config;
mod runner;

pub use ablate::{ablation_suite, ablation_variants, ABLATION_VARIANTS};
pub use compare::{load_comparison, render_table, write_compare_csv, CompareRow};
pub use config::{
    Algorithm, CsvSpec, DatasetKind, DatasetSpec, EvalTarget, ExperimentConfig, MnistSpec,
    ModelSpec, ScoSpec, SplitSpec, SyntheticSpec, TrainSpec, CONFIG_VERSION,
};
pub use runner::{
    build_split, read_metrics_csv, run_experiment, seed_dir, AnyTrainer, MetricStat, MetricsRow,
    RunOptions, RunOutcome, SeedOutcome, Summary, METRICS_SCHEMA, SUMMARY_SCHEMA,
};
