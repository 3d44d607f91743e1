use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite or negative state at t = {t} ({what})")]
    NonFiniteState { t: f64, what: String },

    #[error("component {0} has q = 1; the superlinear characterization needs q > 1")]
    ExponentNotSuperlinear(usize),

    #[error("component {0} has q != 1; the linear characterization needs q = 1")]
    ExponentNotLinear(usize),

    #[error("singular feedback law needs n = 1 and rho = 0")]
    NotSir,

    #[error("singular feedback law denominator vanishes (x (s nu'' + gamma eta) = {0:e})")]
    DegenerateDenominator(f64),

    #[error("state cost is not strictly convex (nu'' = 0), feedback law degenerates")]
    NonconvexNu,

    #[error("linear control cost is not supported by the sweep; use the projected gradient method")]
    LinearCostUnsupported,

    #[error("search space too large: {0} evaluations exceeds the 1e7 guard")]
    SearchSpaceTooLarge(f64),

    #[error("no component has a linear control cost")]
    NoLinearComponents,

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid solver configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
