use thiserror::Error;

/// Errors raised anywhere in the simulation / correction / reconstruction chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate projection: homogeneous coordinate w = {0:e}")]
    DegenerateProjection(f64),

    #[error("view index {index} out of range (geometry has {len} views)")]
    ViewIndex { index: usize, len: usize },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("degenerate kinematics at frame {frame}: {message}")]
    DegenerateKinematics { frame: usize, message: String },

    #[error("integration error at sample {index}: non-finite input")]
    Integration { index: usize },

    #[error("initial pose estimation did not converge after {iterations} iterations (residual {residual:e})")]
    InitializationFailed { iterations: usize, residual: f64 },

    #[error("ill-conditioned fiducial configuration: {0}")]
    Conditioning(String),

    #[error("synchronization error: {0}")]
    Sync(String),

    #[error("coverage error: sample {needed} requested but series has {len} samples")]
    Coverage { needed: usize, len: usize },

    #[error("degenerate rotation: control points are collinear")]
    DegenerateRotation,

    #[error("short scan infeasible: scanned arc {arc_deg:.3} deg < required {required_deg:.3} deg")]
    ShortScanInfeasible { arc_deg: f64, required_deg: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("metric mask selects no voxels")]
    EmptyMask,

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// True for errors that stem from invalid user configuration rather
    /// than from a failing computation.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Json(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
