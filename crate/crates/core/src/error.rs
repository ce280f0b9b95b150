use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis index {index} out of range for truncation order {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("coordinate s = {0} lies outside [0, 1]")]
    CoordinateOutOfRange(f64),

    #[error("kernel violates the q-property: {0}")]
    QProperty(String),

    #[error("invalid rate matrix: {0}")]
    InvalidRates(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("quadrature did not converge (estimated error {estimate:.3e}, tolerance {tolerance:.3e})")]
    Quadrature { estimate: f64, tolerance: f64 },

    #[error("matrix exponential overflowed (max |A t| = {scale:.3e})")]
    ExpOverflow { scale: f64 },

    #[error("mu grid too coarse: relative mode magnitude {tail:.3e} at mu_max = {mu_max}")]
    MuGridTooCoarse { tail: f64, mu_max: f64 },

    #[error("transform does not decay on the mu grid: |g(mu_max)| = {0:.3e}")]
    NonDecaying(f64),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("CFL condition violated: dt = {dt:.3e} exceeds {bound:.3e} ({which})")]
    Cfl { dt: f64, bound: f64, which: &'static str },

    #[error("density leaked through the domain boundary: {measured:.3e} > {tolerance:.3e}")]
    BoundaryLeak { measured: f64, tolerance: f64 },

    #[error("{0}")]
    Precondition(String),

    #[error("{} path(s) overflowed, first indices {:?}", .0.len(), &.0[..(.0.len().min(8))])]
    UnstablePaths(Vec<usize>),

    #[error("incompatible grids: {0}")]
    Grid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
