use thiserror::Error;

/// Which block of the state splitting an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
    Z,
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::X => write!(f, "x"),
            Component::Y => write!(f, "y"),
            Component::Z => write!(f, "z"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {component} component: expected {expected}, got {got}")]
    Dimension {
        component: Component,
        expected: usize,
        got: usize,
    },

    #[error("{0}")]
    Parse(#[from] crate::expr::ParseError),

    #[error("evaluation failed: {0}")]
    Eval(#[from] crate::expr::EvalError),

    #[error("nonlinearity is not differentiable at the requested point: {0}")]
    NotDifferentiable(String),

    #[error(
        "{kind} rate {rate} is violated by ||exp(tM)|| on the verification grid even with K = {k_max:e}; \
         widen the rate by a margin eta (e.g. 0.05)"
    )]
    RateViolation { kind: String, rate: f64, k_max: f64 },

    #[error("empty sigma interval for {which}: ({lo}, {hi}); the gap condition is violated")]
    EmptySigmaInterval { which: &'static str, lo: f64, hi: f64 },

    #[error("tail bound {estimate:e} exceeds tail_tol {tol:e}; increase T_max")]
    TailTolerance { estimate: f64, tol: f64 },

    #[error("matrix exponential overflowed at t = {t}")]
    Overflow { t: f64 },

    #[error("time {t} lies outside the grid [-{t_max}, {t_max}]")]
    OutOfGrid { t: f64, t_max: f64 },

    #[error("fixed-point iteration did not converge in {iters} iterations (last step {last_step:e})")]
    MaxIterations { iters: usize, last_step: f64 },

    #[error(
        "measured contraction rate exceeded delta_phi + slack ({bound}) for {consecutive} consecutive \
         iterations (last rate {rate}); a declared constant is probably underestimated"
    )]
    ContractionViolated {
        rate: f64,
        bound: f64,
        consecutive: usize,
    },

    #[error("iteration count {iters} exceeded the a-priori Banach bound {bound}")]
    AprioriBoundExceeded { iters: usize, bound: usize },

    #[error("contraction conditions not met: {0}")]
    ConditionsNotMet(String),

    #[error("non-finite state encountered at t = {t}")]
    BlowUp { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
