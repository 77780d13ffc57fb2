use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes across the crate.
///
/// Variants fall into three families which the CLI maps onto exit codes:
/// input/validation problems, numerical-resolution failures (the computation
/// could not certify an answer at the requested tolerance), and internal
/// invariant violations (always a bug).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero polynomial has no root set")]
    ZeroPolynomial,

    #[error("path passes within {margin:e} of branch point {point}")]
    NearBranchPoint { point: Complex64, margin: f64 },

    #[error("Sym point {0} collides with a cut crossing of the unit circle; rotate the cuts or move the Sym point")]
    SymPointOnCut(Complex64),

    #[error("homology/reality inconsistency: {0}")]
    Reality(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("degenerate period map: {0}")]
    DegeneratePeriodMap(String),

    #[error("b₀ degenerate: top coefficient {0:e} below tolerance")]
    DegenerateB0(f64),

    #[error("winding not resolved; refine or deflate gcd (snap error {0:.3})")]
    WindingUnresolved(f64),

    #[error("boundary root: stratum boundary case (root {0} on the unit circle is not a gcd root)")]
    BoundaryRoot(Complex64),

    #[error("winding algorithms disagree: argument {arg}, root count {roots}")]
    WindingMismatch { arg: i64, roots: i64 },

    #[error("probe undefined off R^g: {0}")]
    OffStratum(String),

    #[error("nodal curve: a_t has a double root on the unit circle at t = 0")]
    NodalCurve,

    #[error("no Whitham direction: Q not divisible by gcd(B_a) (residual {0:e})")]
    NotDivisible(f64),

    #[error("nonunique tangent: a, b1, b2 share a root (smallest singular value {0:e})")]
    NonuniqueTangent(f64),

    #[error("rank not resolved at fd_step (singular values {0:?})")]
    RankUnresolved(Vec<f64>),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("check failed: {what}: expected {expected}, got {actual}")]
    CheckFailed {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// Process exit code for this failure: 2 input/validation, 3 numerical
    /// resolution, 4 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidCurve(_)
            | Error::InvalidInput(_)
            | Error::ZeroPolynomial
            | Error::SymPointOnCut(_)
            | Error::NodalCurve
            | Error::Precondition(_)
            | Error::OffStratum(_)
            | Error::NotDivisible(_) => 2,
            Error::Invariant(_) => 4,
            _ => 3,
        }
    }
}
