//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong constructing data, fitting, estimating or
/// solving for interval endpoints.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data failed a structural invariant (shape, finiteness, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// The design matrix is (numerically) rank deficient.
    #[error("design matrix is rank deficient; column `{column}` is linearly dependent on earlier columns")]
    RankDeficient { column: String },

    /// A group restriction does not leave enough rows for the kept columns.
    #[error("dimension shortfall: {0}")]
    DimensionShortfall(String),

    /// Per-coefficient adaptation is impossible because there are no other
    /// coefficients to borrow from (p = 1).
    #[error("empty adaptation context for coefficient `{coefficient}`: the model has a single column")]
    EmptyContext { coefficient: String },

    /// The 2x2 moment system is singular (degenerate spectrum); the
    /// box-constrained maximum-likelihood estimator still applies.
    #[error("moment system is singular (degenerate spectrum); use the MLE with a box constraint instead")]
    SingularMomentSystem,

    /// The box-constrained optimizer could not make progress.
    #[error("optimizer failed: {detail}; seed objectives: {seed_trace:?}")]
    OptimizerFailure {
        detail: String,
        seed_trace: Vec<f64>,
    },

    /// The endpoint solver ran out of iterations. Carries the bracket state
    /// for diagnosis.
    #[error("endpoint solver did not converge after {iterations} iterations; bracket [{lo}, {hi}], residuals ({f_lo}, {f_hi})")]
    SolverFailure {
        iterations: usize,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    /// A configuration value is inconsistent or unsupported.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An internal numerical check failed (loss of orthogonality, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Error from a lower-level operation, annotated with the coefficient it
    /// occurred for.
    #[error("coefficient `{coefficient}`: {source}")]
    ForCoefficient {
        coefficient: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn for_coefficient(self, name: &str) -> Error {
        Error::ForCoefficient {
            coefficient: name.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
