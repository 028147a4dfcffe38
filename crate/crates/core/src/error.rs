use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth:.6} mm)")]
    PointBehindCamera { depth: f64 },

    #[error("degenerate ray configuration for triangulation")]
    DegenerateRays,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("ill-conditioned system (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("optimizer did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("optimizer diverged: {0}")]
    Divergence(String),

    #[error("no near-right angle among marker blobs (best deviation {deviation_deg:.1} deg)")]
    AmbiguousTarget { deviation_deg: f64 },

    #[error("marker scale mismatch: measured {measured:.3} mm, expected {expected:.3} mm")]
    ScaleMismatch { measured: f64, expected: f64 },

    #[error("probe motion does not span enough orientations (spread {spread_deg:.1} deg)")]
    UnderconstrainedMotion { spread_deg: f64 },

    #[error("no blob found above threshold")]
    NoBlob,

    #[error("centerline not found in any row")]
    CenterlineNotFound,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0}")]
    OutOfView(String),

    #[error("unknown protocol '{0}'")]
    UnknownProtocol(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// I/O error carrying the offending path in its message.
    pub fn io_at(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateRays
            | Error::Degenerate(_)
            | Error::IllConditioned(_)
            | Error::AmbiguousTarget { .. }
            | Error::UnderconstrainedMotion { .. }
            | Error::EmptyInput(_)
            | Error::NoBlob
            | Error::CenterlineNotFound => 2,
            Error::NonConvergence { .. } | Error::Divergence(_) => 3,
            _ => 1,
        }
    }
}
