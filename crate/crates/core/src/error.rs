//! Crate-wide error type and exit-code categories.

use crate::data::Group;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by callers (e.g. the CLI) to map errors to
/// exit codes: config -> 2, data -> 3, identification -> 4, numerical -> 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Identification,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    // -------- configuration / domain --------
    #[error("unknown link '{0}' (valid names: normal, logistic, cauchy, uniform, identity)")]
    UnknownLink(String),
    #[error("{0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no link assigned for {0}")]
    MissingLink(String),

    // -------- data ingestion --------
    #[error("io error reading '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("column '{0}' not found in CSV header")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("row {row}: duplicate observation for unit '{unit}' at period {period}")]
    DuplicateObservation {
        row: usize,
        unit: String,
        period: i32,
    },
    #[error("unit '{unit}' has inconsistent group labels ({first} and {second})")]
    InconsistentGroup {
        unit: String,
        first: Group,
        second: Group,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("no observations in period {0}")]
    EmptyPeriod(i32),

    // -------- identification --------
    #[error("no observations in cell (group {group}, period {period})")]
    EmptyCell { group: Group, period: i32 },
    #[error("step functions are defined on different grids")]
    GridMismatch,
    #[error("probability grids do not match")]
    TauGridMismatch,
    #[error("period {pre} is not a valid pre-treatment period for group {group}")]
    InvalidPrePeriod { pre: i32, group: Group },
    #[error("period {post} is not a valid post-treatment period for group {group}")]
    InvalidPostPeriod { post: i32, group: Group },
    #[error("indeterminate index (\u{221e} \u{2212} \u{221e}) at grid point {0}")]
    IndeterminateIndex(f64),

    // -------- aggregation --------
    #[error("no valid (group, pre, post) triple: {0}")]
    NoValidTriples(String),
    #[error("missing distribution function for weighted triple (g={group}, t'={pre}, t={post})")]
    MissingTripleDf { group: Group, pre: i32, post: i32 },
    #[error("weights sum to {0}, outside the accepted range [0.999, 1.001]")]
    NonConvexWeights(f64),

    // -------- grids / numerics / inference --------
    #[error("grid is empty after applying the trimming rule")]
    EmptyGrid,
    #[error("grid points must be strictly increasing and finite")]
    GridNotIncreasing,
    #[error("interval is malformed: lo={0} > hi={1}")]
    MalformedInterval(f64, f64),
    #[error("band envelopes cross after monotonisation at grid index {0}")]
    BandEdgesCross(usize),
    #[error("bootstrap distribution is degenerate: replications coincide but differ from the estimate")]
    DegenerateBootstrap,
    #[error("bootstrap scale is degenerate at every grid point")]
    DegenerateScale,
    #[error("replication {rep}: cell (group {group}, period {period}) still empty after {retries} redraws")]
    DegenerateReplication {
        rep: usize,
        group: Group,
        period: i32,
        retries: usize,
    },
    #[error("{percent:.1}% of bootstrap replications were degenerate (limit 10%)")]
    TooManyDegenerate { percent: f64 },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("fit failed in cell (group {group}, period {period}) at grid point {y}: {message}")]
    FitFailure {
        group: Group,
        period: i32,
        y: f64,
        message: String,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            UnknownLink(_) | Config(_) | MissingLink(_) | NonConvexWeights(_) => {
                ErrorCategory::Config
            }
            Io { .. }
            | MissingColumn(_)
            | BadRow { .. }
            | DuplicateObservation { .. }
            | InconsistentGroup { .. }
            | EmptyDataset
            | InvalidPanel(_)
            | EmptyPeriod(_) => ErrorCategory::Data,
            EmptyCell { .. }
            | InvalidPrePeriod { .. }
            | InvalidPostPeriod { .. }
            | NoValidTriples(_)
            | MissingTripleDf { .. }
            | DegenerateReplication { .. }
            | TooManyDegenerate { .. } => ErrorCategory::Identification,
            Domain(_)
            | GridMismatch
            | TauGridMismatch
            | IndeterminateIndex(_)
            | EmptyGrid
            | GridNotIncreasing
            | MalformedInterval(..)
            | BandEdgesCross(_)
            | DegenerateBootstrap
            | DegenerateScale
            | RankDeficient
            | FitFailure { .. } => ErrorCategory::Numerical,
        }
    }
}
