//! Seeded active-learning and two-shot BO experiments: batch selection,
//! noisy evaluation, hyperparameter refits, metrics, timings and result files.

mod bo;
mod config;
mod model;
mod ranking;
mod runner;

pub use bo::{incumbent, perturbed_batches, BoUtility};
pub use config::{parse_seeds, Algo, ExperimentConfig, Mode};
pub use model::{evaluate_model, inferred_maximizer, FittedModel, ModelMetrics};
pub use ranking::{compute_rankings, fractional_ranks, lower_is_better, parse_runs_csv, read_runs_csv, MetricRow, Rankings};
pub use runner::{
    csv_rows, derive_seed, evaluate_acquisition, run_active_learning, run_experiment, run_seed, run_two_shot, summarize_ensemble,
    write_outputs, BatchMetrics, BatchRecord, ExperimentOutcome, ParamSummary, PhaseTimings, RunRecord, RunStatus, CSV_HEADER,
    SCHEMA_VERSION,
};
