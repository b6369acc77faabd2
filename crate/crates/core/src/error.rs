use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian at ({row}, {col}): defect {defect:e}")]
    NotHermitian { row: usize, col: usize, defect: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("eigenvector {eigenvector} has maximum basis overlap {max_overlap:.4}; states cannot be labelled")]
    Labeling {
        eigenvector: usize,
        max_overlap: f64,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("near-resonant denominator {denominator:e} Hz in perturbative reduction")]
    NearResonance { denominator: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("inconsistent microwave pair: residual {residual:e} Hz exceeds {limit:e} Hz")]
    InconsistentPair { residual: f64, limit: f64 },

    #[error("model misfit: weighted residual {residual:.3} Hz exceeds {limit} Hz")]
    ModelMisfit { residual: f64, limit: f64 },

    #[error("closed-form residual {analytic:.4} Hz disagrees with exact residual {exact:.4} Hz")]
    OracleMismatch { analytic: f64, exact: f64 },

    #[error("fit has not converged")]
    Unconverged,
}
