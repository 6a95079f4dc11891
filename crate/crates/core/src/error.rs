use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh structure: {0}")]
    Structure(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("index out of range in {record}: {msg}")]
    IndexOutOfRange { record: String, msg: String },

    #[error("mesh has no cells")]
    NoCells,

    #[error("degenerate tetrahedron {tet}: volume {volume:e}")]
    DegenerateTet { tet: usize, volume: f64 },

    #[error("kernel singular at z = 0; use singular quadrature")]
    Singularity,

    #[error("evaluation point too close to the boundary (distance {distance:e} < {threshold:e}); use a refined evaluation")]
    NearSingular { distance: f64, threshold: f64 },

    #[error("non-finite entry for triangle pair ({0}, {1})")]
    NonFinite(usize, usize),

    #[error("symbol evaluation failed at s = {re} + {im}i: {msg}")]
    Symbol { re: f64, im: f64, msg: String },

    #[error("convolution weights have imaginary residue {residue:e} (relative)")]
    ImaginaryResidue { residue: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular step matrix (condition estimate {0:e})")]
    SingularStep(f64),

    #[error("non-finite state at step {0}")]
    NumericalAbort(usize),

    #[error("time step {dt} exceeds the CFL limit {dt_max}")]
    Cfl { dt: f64, dt_max: f64 },

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
