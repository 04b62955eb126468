use crate::geometry::Pose;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants carry enough context to map onto the
/// CLI exit codes (parse = 2, degenerate geometry = 3, numerical = 4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rotation angle is within numerical precision of pi; axis sign is ambiguous")]
    AmbiguousRotation,

    #[error("point elevation {elevation:.6} rad outside panorama range [{min:.6}, {max:.6}]")]
    ElevationOutOfBounds { elevation: f64, min: f64, max: f64 },

    #[error("range must be positive, got {0}")]
    NonPositiveRange(f64),

    #[error("pixel ({row:.2}, {col:.2}) outside {width}x{height} image")]
    PixelOutOfBounds { row: f64, col: f64, width: usize, height: usize },

    #[error("downsample factor {factor} does not divide {width}x{height}")]
    NonDivisibleFactor { factor: usize, width: usize, height: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("imu stream does not cover [{from:.6}, {to:.6}]: {reason}")]
    MissingImuData { from: f64, to: f64, reason: String },

    #[error("degenerate geometry: {accepted} correspondences at iteration {iteration} (need >= 6)")]
    DegenerateGeometry { accepted: usize, iteration: usize, last_estimate: Box<Pose> },

    #[error("normal equations ill-conditioned (condition {condition:.3e}); {} unconstrained direction(s)", directions.len())]
    IllConditioned { condition: f64, directions: Vec<[f64; 6]> },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate alignment geometry: {0}")]
    DegenerateAlignment(String),

    #[error("no correspondences between trajectories")]
    EmptyCorrespondences,

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse { path: String, offset: u64, message: String },

    #[error("map archive corrupt at keyframe {keyframe}: {message}")]
    Archive { keyframe: u32, message: String },

    #[error("unknown scene '{name}'; available: {}", available.join(", "))]
    UnknownScene { name: String, available: Vec<String> },

    #[error("unknown trajectory spec '{0}'; expected forms like stationary:10, line:100x1.5, square:40x1.5")]
    UnknownTrajectory(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::UnknownScene { .. }
            | Error::UnknownTrajectory(_)
            | Error::InvalidConfig(_) => 2,
            Error::DegenerateGeometry { .. }
            | Error::IllConditioned { .. }
            | Error::DegenerateAlignment(_)
            | Error::EmptyCorrespondences => 3,
            Error::NumericalFailure(_) | Error::AmbiguousRotation => 4,
            _ => 1,
        }
    }
}
