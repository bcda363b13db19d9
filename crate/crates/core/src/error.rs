use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by the numerical core.
///
/// Variants are grouped by how a caller should react: input errors
/// (`NonFinite`, `NotSymmetric`, `Dimension`, `InvalidParameter`), signals
/// that a gain is not stabilizing (`SingularGenerator`, `NonPositiveSolution`,
/// `NotStabilizing`), data-quality problems in the model-free path
/// (`RankDeficient`, `Blowup`, `NonConvergence`) and broken internal
/// invariants (`InvariantViolation`, `VerificationFailed`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: non-finite entry at ({row}, {col})")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("{what}: asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    NotSymmetric {
        what: &'static str,
        asymmetry: f64,
        tolerance: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("symmetric eigen-solver did not converge")]
    EigenNoConvergence,

    #[error("closed-loop generator is numerically singular; the gain is not a mean-square stabilizer")]
    SingularGenerator,

    #[error("Lyapunov solution is not positive definite (smallest eigenvalue {min_eigenvalue:e}); the gain is not a mean-square stabilizer")]
    NonPositiveSolution { min_eigenvalue: f64 },

    #[error("R + DᵀPD is numerically singular")]
    SingularInnerMatrix,

    #[error("initial gain does not stabilize the discounted system")]
    NotStabilizing,

    #[error("policy iteration did not converge in {iterations} iterations (last ‖ΔP‖_F = {last_change:e})")]
    MaxItersExceeded { iterations: usize, last_change: f64 },

    #[error("discount schedule did not reach α ≤ 0 within {iterations} outer iterations (α = {alpha})")]
    MaxOuterItersExceeded { iterations: usize, alpha: f64 },

    #[error("cost must be strictly positive, got {0:e}")]
    NonPositiveCost(f64),

    #[error("the zero gain is not a stabilizer of the system shifted by α₀ = {alpha0}")]
    InvalidInitialAlpha { alpha0: f64 },

    #[error("state norm exceeded {limit:e} in sub-batch {sub_batch}, path {path} at t = {time}; the behavior gain does not stabilize the discounted system")]
    Blowup {
        sub_batch: usize,
        path: usize,
        time: f64,
        limit: f64,
    },

    #[error("data matrix is rank deficient (σ_min/σ_max = {ratio:e} < {tolerance:e}); enlarge the number of sub-batches or enrich the exploration noise")]
    RankDeficient { ratio: f64, tolerance: f64 },

    #[error("policy iteration stalled: ‖ΔP‖_F plateaued at {floor:e}, above tolerance {eps:e}")]
    NonConvergence { floor: f64, eps: f64 },

    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),

    #[error("final gain failed the mean-square stabilizer check on the undiscounted system")]
    VerificationFailed,

    #[error("batch file: {0}")]
    BatchFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
