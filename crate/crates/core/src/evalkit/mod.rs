//! Protocols, score matrices and biometric metrics.

mod eval;
mod factors;
mod metrics;
mod probes;
mod protocol;

pub use eval::{
    alpha_sweep, build_score_matrix, duration_sweep, evaluate, prefix_len, AlphaRow, DurationRow, EvalReport,
    Exclusion, LabeledSignature, MetricValues, ScoreMatrices, TarPoint,
};
pub use factors::{factor_probes, FactorProbeReport};
pub use metrics::{cmc, rank1, tar_at_far, Channel, Rank1, ScoreMatrix};
pub use probes::{r_squared, LinearProbe};
pub use protocol::{
    builtin_protocols, synthetic_protocol, Clause, GalleryAggregation, Metric, ProtocolSpec, ProtocolSplit, Selector,
    SubjectSet,
};

use crate::engine::EngineError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("undefined FAR: {0}")]
    UndefinedFar(String),
    #[error("probe fit failed: {0}")]
    Probe(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}
