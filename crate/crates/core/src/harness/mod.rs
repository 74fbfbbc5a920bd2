//! Benchmark protocol: training, evaluation, search, baselines, and reports.

mod baselines;
mod config;
mod evaluate;
mod protocol;
mod report;
mod search;
mod train;

pub use baselines::{few_shot_finetune, halve_test_classes, many_shot_baseline};
pub use config::{AnalysisConfig, ProtocolConfig, SearchSpace, Selection, TrainConfig};
pub use evaluate::{evaluate, Extras, Scorer};
pub use protocol::{run_protocol, run_protocol_with, MethodResult, Pick, ProtocolResult, SeedRun};
pub use report::{
    analysis_correlations, emit_report, read_results, render_report, search_correlations, summarize, Spread, SummaryRow,
    UpstreamRow,
};
pub use search::{derive_seed, sample_configs, select_best, Candidate};
pub use train::{fit, observations, observations_of, train_method, LabeledSet, TrainedModel};
