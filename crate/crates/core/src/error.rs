//! Crate-wide error type.
//!
//! Every fallible operation in the library funnels into [`Error`]; the CLI
//! maps variants onto process exit codes in `main`.

use thiserror::Error;

/// Structured error for every failure mode in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Vector lengths or ambient dimensions disagree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A point that should lie on the unit sphere does not.
    #[error("point is not on the unit sphere (|x| = {norm})")]
    NotUnit { norm: f64 },

    /// Ambient dimension too small; the sphere must be S^n with n >= 2.
    #[error("ambient dimension {dim} too small; need at least 3 coordinates (n >= 2)")]
    DimensionTooSmall { dim: usize },

    /// A tangent frame failed its orthonormality check.
    #[error("tangent frame is not orthonormal (max defect {defect:.3e})")]
    FrameNotOrthonormal { defect: f64 },

    /// Tangent vector too long for the exponential chart (|v| >= pi).
    #[error("chart overflow: tangent vector norm {norm} >= pi")]
    ChartOverflow { norm: f64 },

    /// The logarithm map is undefined at the antipode of the base point.
    #[error("point is antipodal to the chart base; log map undefined")]
    AntipodalPoint,

    /// Finite-difference step outside the supported range.
    #[error("step size {h} outside supported range [{lo}, {hi}]")]
    BadStepSize { h: f64, lo: f64, hi: f64 },

    /// Expression text failed to parse.
    #[error("parse error at offset {offset}: expected {expected}, found {found}")]
    Parse {
        offset: usize,
        expected: String,
        found: String,
    },

    /// Expression evaluation hit a domain error (log of a non-positive
    /// value, division by zero, fractional power of a negative base, ...).
    #[error("domain error evaluating `{node}`: {message}")]
    EvalDomain { node: String, message: String },

    /// An expression referenced a variable beyond the ambient dimension.
    #[error("variable x{index} out of range; this problem has coordinates x1..x{max}")]
    VariableOutOfRange { index: usize, max: usize },

    /// The candidate curvature function is not strictly positive.
    #[error("K is not positive: K = {value} at sample point {point:?}")]
    NotPositive { value: f64, point: Vec<f64> },

    /// |grad K| is below tolerance at every sample point (K is constant or
    /// nearly so); critical-point detection is meaningless.
    #[error("gradient identically below tolerance everywhere; K has no isolated critical points")]
    GradientDegenerate,

    /// A flatness fit found no signal along one chart axis.
    #[error("axis {axis} degenerate in flatness fit: |K - K(y)| < {threshold:.1e} at all radii")]
    AxisDegenerate { axis: usize, threshold: f64 },

    /// Per-axis flatness exponents disagree beyond tolerance.
    #[error("K is not flat at this point: per-axis exponent spread {residual:.3e} exceeds {tol:.3e}")]
    NotFlat { residual: f64, tol: f64 },

    /// Invalid user-supplied critical-point data.
    #[error("invalid critical point: {reason}")]
    InvalidCriticalPoint { reason: String },

    /// Integral parameters outside the convergence region.
    #[error("integral diverges: {reason}")]
    IntegralDiverges { reason: String },

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: estimated error {error:.3e} after {evals} evaluations")]
    QuadratureNoConverge { error: f64, evals: usize },

    /// sigma outside (0, 1).
    #[error("sigma = {sigma} outside the admissible range (0, 1)")]
    BadSigma { sigma: f64 },

    /// Two points expected to be distinct coincide within tolerance.
    #[error("points {i} and {j} coincide (geodesic distance {dist:.3e})")]
    CoincidentPoints { i: usize, j: usize, dist: f64 },

    /// A matrix operation was asked for on points outside the flat-critical
    /// stratum it is defined on.
    #[error("point {index} is outside the beta = n - 2*sigma stratum (beta = {beta})")]
    WrongStratum { index: usize, beta: f64 },

    /// The Jacobi eigensolver failed to converge.
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {offdiag:.3e})")]
    EigenNoConverge { sweeps: usize, offdiag: f64 },

    /// Family enumeration would exceed the hard subset budget.
    #[error("census too large: {subsets} subsets exceeds 2^20; re-run with --force to override")]
    CensusTooLarge { subsets: u64 },

    /// Integer overflow in an ordered-tuple census sum.
    #[error("census sum overflowed a signed 64-bit integer (ordered-tuple mode)")]
    CensusOverflow,

    /// Invalid problem description.
    #[error("invalid problem: {reason}")]
    InvalidProblem { reason: String },

    /// Invalid flow state or configuration.
    #[error("invalid flow state: {reason}")]
    InvalidFlowState { reason: String },

    /// Adaptive time stepping hit dt_min without an acceptable step.
    #[error("stiff step: no acceptable step above dt_min = {dt_min:.3e} at t = {t:.6e}")]
    StiffStep { dt_min: f64, t: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
