use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("node index {index} out of range for graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },

    #[error("conflicting weights for edge ({i}, {j}): {w_ij} vs {w_ji}")]
    WeightConflict { i: usize, j: usize, w_ij: f64, w_ji: f64 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("curvature mismatch: {0} vs {1}")]
    CurvatureMismatch(f64, f64),

    #[error("nodes {0} and {1} are disconnected")]
    Disconnected(usize, usize),

    #[error("size guard exceeded: {what} has {actual}, limit is {limit}")]
    SizeGuard {
        what: &'static str,
        actual: usize,
        limit: usize,
    },

    #[error("signed distance is singular: denominator {0}")]
    Singular(f64),

    #[error("unstable flow step: dt * max|Ric| = {0} >= 1")]
    Unstable(f64),

    #[error("infeasible transport problem: supply {supply} vs demand {demand}")]
    Infeasible { supply: f64, demand: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}: structure={structure}, feature={feature}")]
    NonFiniteLoss {
        epoch: usize,
        structure: f64,
        feature: f64,
    },

    #[error("missing data: {0}")]
    Missing(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
