use thiserror::Error;

/// Failures raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("both homogeneous coordinates vanish")]
    ZeroVector,

    #[error("both coordinate forms vanish at the point (|F(p)| = {norm:e})")]
    DegenerateImage { norm: f64 },

    #[error("map is too close to the degenerate locus (distance proxy {dist:e})")]
    DegenerateMap { dist: f64 },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("root finder did not reach residual {tol:e} (got {residual:e})")]
    SolverDivergence { residual: f64, tol: f64 },

    #[error("full preimage tree would hold {leaves} leaves (budget {budget})")]
    BudgetExceeded { leaves: u128, budget: u128 },

    #[error("tail bound stopped decreasing at truncation depth {depth} (bound {bound:e})")]
    NoConvergence { depth: usize, bound: f64 },

    #[error("base point is exceptional: its fiber has a single distinct point")]
    ExceptionalBase,

    #[error("sample point within {distance:e} of a logarithmic pole")]
    SingularHit { distance: f64 },

    #[error("invalid observable spec: {0}")]
    InvalidSpec(String),

    #[error("variance {variance:e} is below the noise floor")]
    DegenerateVariance { variance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
