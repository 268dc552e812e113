use thiserror::Error;

/// Errors raised by the depth objective, its samplers, the renderer and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive depth {value} at pixel ({x}, {y})")]
    NonPositiveDepth { x: usize, y: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty valid set")]
    EmptyValidSet,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient in term `{term}`")]
    NonFiniteGradient { term: String },

    #[error("optimization diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error(
        "pseudo-depth ordinal audit failed: {flipped} of {checked} confident pairs flipped; \
         use a smaller smoothing radius"
    )]
    OrdinalAudit { flipped: usize, checked: usize },

    #[error("ray through pixel ({x}, {y}) of view {view} misses every surface")]
    UncoveredPixel { x: usize, y: usize, view: char },

    #[error("malformed grid file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
