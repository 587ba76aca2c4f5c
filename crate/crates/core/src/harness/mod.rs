//! End-to-end simulation, metrics, sweeps, experiment configuration and reports.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod simulate;
pub mod synthetic;

pub use config::{ExperimentConfig, ExpertSpec, ScorerSpec};
pub use experiment::{build_router, evaluate_stream_logs, run_sweep, simulate, train_encoder, Simulation, TrainSummary};
pub use metrics::{
    classification_scores, compute_metrics, resolve_deferrals, ClassMetrics, Counts, LatencyModel, MetricsReport, Resolution, ResolvedStep,
};
pub use report::{describe, read_summary_csv, write_json, write_stream_logs, write_summary_csv, write_sweep_csv, SummaryRow};
pub use simulate::{
    evaluate_logs, evaluate_scorer, expert_request, fit_meta_models, route_dataset, route_stream, run_dataset, run_stream, score_dataset,
    score_stream, sweep, Preset, ScorerReport, StreamLog, SweepGrid, SweepRow,
};
pub use synthetic::{generate, uninformative_prefix, SyntheticConfig};
