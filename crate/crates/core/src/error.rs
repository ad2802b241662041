use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("robot model error: {0}")]
    Model(String),

    #[error("joint type error: {0}")]
    JointType(String),

    #[error("degenerate skinning blend (det = {det:e})")]
    DegenerateBlend { det: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no valid depth at pixel ({x:.2}, {y:.2})")]
    NoDepth { x: f64, y: f64 },

    #[error("insufficient depth samples: {found} valid, {required} required")]
    InsufficientDepth { found: usize, required: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("visibility error: {0}")]
    Visibility(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("grasp point lies on the joint axis (distance {distance:e} m)")]
    DegenerateGrasp { distance: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("optimization diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("part {index}: {source}")]
    Part {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn part(index: usize, source: Error) -> Self {
        Error::Part {
            index,
            source: Box::new(source),
        }
    }

    /// Innermost error, unwrapping per-part context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Part { source, .. } => source.root(),
            other => other,
        }
    }
}
