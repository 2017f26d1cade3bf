//! Automatic metrics, judges, agreement and significance statistics, the
//! threshold sweep and report emission.

mod evaluate;
mod judges;
mod metrics;
mod report;
mod stats;
mod sweep;

use thiserror::Error;

use crate::gateway::BackendError;
use crate::training::TrainError;

pub use evaluate::{evaluate_policy, EvalSettings, GeneratedTurn, Judges};
pub use judges::{
    bundled_strategy_exemplars, emotion_appropriateness, parse_strategy_exemplars,
    strategy_consistency, CentroidStrategyJudge, EmotionJudge, ExactEmotionJudge, StrategyJudge,
};
pub use metrics::{
    bleu4, distinct3, embedding_f1, eval_records_from_dialogues, pair_embedding_f1, perplexity,
    response_length, EvalRecord, PerplexityScope,
};
pub use report::{best_rows, emit_report, ingest_report_json, MetricReport, ReportDocument, ReportFormat};
pub use stats::{fleiss_kappa, welch_t_test, RatingTable, WelchResult};
pub use sweep::{default_sweep_grid, sweep_csv, threshold_sensitivity_sweep, SweepPoint, SweepRow, SWEEP_CSV_HEADER};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    EmptyBatch,
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Train(Box<TrainError>),
    #[error("each sample needs at least 2 values, got {0}")]
    SampleTooSmall(usize),
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("both samples are constant with different means")]
    DegenerateSample,
    #[error("t distribution: {0}")]
    Distribution(String),
    #[error("invalid rating table: {0}")]
    InvalidTable(String),
    #[error("strategy exemplars: {0}")]
    Exemplars(String),
    #[error("metric out of range: {0}")]
    OutOfRange(String),
    #[error("report format: {0}")]
    Format(String),
}
