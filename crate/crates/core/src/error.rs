use crate::tensor::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("point ({}, {}) lies outside the domain", .0[0], .0[1])]
    OutOfDomain(Point),

    #[error("non-finite value {what} in element {element}")]
    Assembly { element: usize, what: &'static str },

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("incompatible periodic right-hand side: mean {mean:e} exceeds {tolerance:e} relative to norm {norm:e}")]
    Incompatible { mean: f64, norm: f64, tolerance: f64 },

    #[error("Picard iteration did not converge in {iterations} iterations (last increment {last:e}); try a smaller damping")]
    PicardNonConvergence { iterations: usize, last: f64, increments: Vec<f64> },

    #[error("invalid coefficient model: {0}")]
    InvalidModel(String),

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("Voigt-Reuss bounds violated: {0}")]
    VoigtReuss(String),

    #[error("fine grid needs {dofs} unknowns, above the cap of {cap}; reduce cells per period or the smallest eps")]
    DofCap { dofs: usize, cap: usize },

    #[error("{0}")]
    Analysis(String),

    #[error("sample u = {u}, x = ({}, {}): {source}", .x[0], .x[1])]
    Sample {
        u: f64,
        x: Point,
        #[source]
        source: Box<Error>,
    },
}
