use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
///
/// Checks that merely *fail numerically* do not error — they return a report
/// with `pass = false`. Errors are reserved for malformed inputs, violated
/// preconditions, and internal cross-validation failures.
#[derive(Debug, Error)]
pub enum Error {
    // ---- expression DSL ----
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("undefined variable `{0}`")]
    UndefinedVariable(String),
    #[error("domain error: {0}")]
    Domain(String),

    // ---- matrix Lie groups ----
    #[error("matrix of size {rows}x{cols} does not match group dimension {expected}")]
    BadMatrixSize {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("basis is not closed under the commutator (projection residual {residual:.3e})")]
    BasisNotClosed { residual: f64 },
    #[error("elements belong to different groups (`{0}` vs `{1}`)")]
    GroupMismatch(String, String),
    #[error("matrix is not a member of group `{group}` (residual {residual:.3e})")]
    NotInGroup { group: String, residual: f64 },
    #[error("element lies outside the logarithm guard (|g - I| = {norm:.3e} >= {guard:.3e})")]
    OutOfInjectivityRadius { norm: f64, guard: f64 },

    // ---- bundles and charts ----
    #[error("chart index {0} out of range (bundle has {1} charts)")]
    UnknownChart(usize, usize),
    #[error("point {point:?} lies outside the domain of chart {chart}")]
    OutOfChart { chart: usize, point: Vec<f64> },
    #[error("no overlap declared between charts {0} and {1}")]
    NoSuchOverlap(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    // ---- groupoids ----
    #[error("arrows are not composable: source {src:?} != target {dst:?}")]
    NotComposable { src: Vec<f64>, dst: Vec<f64> },
    #[error("transport map is not a groupoid morphism (residual {residual:.3e} at tolerance {tol:.3e})")]
    NotAMorphism { residual: f64, tol: f64 },

    // ---- connections ----
    #[error("connection is not equivariant under the structure group (residual {residual:.3e} at tolerance {tol:.3e})")]
    NotIsometablic { residual: f64, tol: f64 },
    #[error("connection does not vanish on vertical vectors (residual {residual:.3e} at tolerance {tol:.3e})")]
    NotVanishingOnVertical { residual: f64, tol: f64 },
    #[error("connection is not flat (curvature residual {residual:.3e} at tolerance {tol:.3e})")]
    NotFlat { residual: f64, tol: f64 },
    #[error("internal cross-check failed: {context} disagree by {residual:.3e}")]
    CrossCheck { context: String, residual: f64 },

    // ---- path lifting ----
    #[error("integration step too large: per-step rotation {magnitude:.3e} exceeds 0.5; increase `steps`")]
    StepTooLarge { magnitude: f64 },
    #[error("path leaves chart {chart} at t = {t}")]
    PathLeavesChart { chart: usize, t: f64 },
    #[error("path must be integrated with at least one step")]
    ZeroSteps,
    #[error("invalid loop description: {0}")]
    BadLoop(String),

    // ---- spec / report plumbing ----
    #[error("invalid experiment spec at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("unsupported spec schema version {0}")]
    UnsupportedSchema(u64),
    #[error("unknown check `{0}`")]
    UnknownCheck(String),
    #[error("check `{check}` requires a `{block}` block in the spec")]
    MissingBlock { check: String, block: String },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for spec-validation failures.
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}
