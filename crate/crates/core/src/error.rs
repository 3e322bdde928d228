use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },

    #[error("field must be positive, found {value:e} at node {node}")]
    NonPositiveField { node: usize, value: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular operator: {0}")]
    SingularOperator(String),

    #[error("no strict constant subsolution: inf of the supersolution is {inf_psi:e}")]
    NoSubsolution { inf_psi: f64 },

    #[error("not a supersolution: defect {defect:e} at node {node}")]
    NotASupersolution { node: usize, defect: f64 },

    #[error("no supersolution found (best constant-scan defect {best_defect:e} at t = {best_t})")]
    NoSupersolutionFound { best_defect: f64, best_t: f64 },

    #[error("monotone ordering violated at iterate {iterate}, node {node}: {detail}")]
    MonotonicityViolated {
        iterate: usize,
        node: usize,
        detail: String,
    },

    #[error("Picard contraction violated: measured ratio {ratio}")]
    ContractionViolated { ratio: f64 },

    #[error(
        "smallness condition a_k < a_tilde violated at outer iterate {iterate}, node {node}: \
         a_k = {a_k}, a_tilde = {a_tilde}"
    )]
    ConditionViolated {
        iterate: usize,
        node: usize,
        a_k: f64,
        a_tilde: f64,
    },

    #[error("divergence detected at outer iterate {iterate}: C2 surrogate grew by {growth}x")]
    DivergenceDetected { iterate: usize, growth: f64 },

    #[error("Delta + h is not coercive (first eigenvalue {lambda:e})")]
    NotCoercive { lambda: f64 },

    #[error("eigenfunction is not one-signed (min {min:e}, max {max:e})")]
    SignIndefiniteEigenfunction { min: f64, max: f64 },
}

impl Error {
    /// True for the solver failure modes the CLI maps to exit code 3.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::ConditionViolated { .. }
                | Error::DivergenceDetected { .. }
                | Error::ContractionViolated { .. }
                | Error::MonotonicityViolated { .. }
                | Error::SignIndefiniteEigenfunction { .. }
        )
    }
}
