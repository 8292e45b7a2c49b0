use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} = {value} is outside the domain ({reason})")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("value overflows f64, only its logarithm {log_value} is available")]
    Overflow { log_value: f64 },
    #[error("tail extrapolation is unstable: {0}")]
    GridTooSmall(String),
    #[error("panel quadrature did not converge on [{a}, {b}]")]
    Stiffness { a: f64, b: f64 },
    #[error("tail not resolved: {0}")]
    TailUnresolved(String),
    #[error("moment order {n} exceeds the table depth {depth}")]
    DepthExceeded { n: usize, depth: usize },
    #[error("exponential bound invalid: lambda * m = {0} >= 1")]
    BoundInvalid(f64),
    #[error("moment series diverges: |theta| * m = {0} >= 1")]
    SeriesDiverges(f64),
    #[error("no stable limit: {0}")]
    NoLimit(String),
    #[error("drift overshoots at x = {x}; use dt <= {suggested_dt:e}")]
    StepTooLarge { x: f64, suggested_dt: f64 },
    #[error("delta = {delta} rejected: {reason}")]
    DeltaTooLarge { delta: f64, reason: String },
    #[error("coupled paths lost their ordering at step {step}")]
    CouplingViolated { step: usize },
    #[error("eigenvalue {k} not separated: {reason}")]
    EigenNotSeparated { k: usize, reason: String },
    #[error("tail of eigenfunction {k} not resolved: {reason}")]
    TailNotPlateaued { k: usize, reason: String },
    #[error("series terms still growing at K = {k}: e^(-lambda_K t) sup|psi_K|^2 = e^{log_term:.1}")]
    TermsGrowing { k: usize, log_term: f64 },
    #[error("truncation bound {bound:e} dominates the series value {value:e}")]
    TruncationDominates { value: f64, bound: f64 },
    #[error("series cancels: largest term e^{log_max_term:.1}, sum e^{log_value:.1}")]
    Cancellation { log_max_term: f64, log_value: f64 },
    #[error("insufficient sample: n = {n}, need at least {need}")]
    InsufficientSample { n: usize, need: usize },
    #[error("tail window too noisy: r2 = {r2:.4}")]
    WindowTooNoisy { r2: f64 },
    #[error("config line {line}, key `{key}`: {message}")]
    Config { line: usize, key: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::Domain { name, value, reason }
}
