use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular operating point{}: {reason}", .index.map(|i| format!(" at snapshot {i}")).unwrap_or_default())]
    SingularOperatingPoint { index: Option<usize>, reason: String },
    #[error("insufficient snapshots: need at least {required}, got {got}")]
    InsufficientSnapshots { required: usize, got: usize },
    #[error("design matrix is rank deficient (rank {rank} of 7, condition {condition:.3e})")]
    RankDeficient { rank: usize, condition: f64 },
    #[error("candidate grid too large: {count} exceeds limit {limit}")]
    GridTooLarge { count: usize, limit: usize },
    #[error("no feasible hypothesis: every candidate produced a degenerate cluster")]
    NoFeasibleHypothesis,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;
