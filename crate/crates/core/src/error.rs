use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report. Variants carry enough context to
/// name the offending pixel, point, or file.
#[derive(Debug, Error)]
pub enum Error {
    #[error("NonPositiveDepth: pixel {index} has value {value}")]
    NonPositiveDepth { index: usize, value: f64 },

    #[error("NonFiniteValue: element {index} is not finite")]
    NonFiniteValue { index: usize },

    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),

    #[error("ValueOutOfRange: element {index} holds {value}, expected a value in [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },

    #[error("ShapeTooSmall: {width}x{height} is below the required {min}x{min}")]
    ShapeTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("BehindCamera: point has Z = {z}")]
    BehindCamera { z: f64 },

    #[error("InvalidIntrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("InvalidWeights: {0}")]
    InvalidWeights(String),

    #[error("EmptyCloud: nearest-neighbour query against an empty point cloud")]
    EmptyCloud,

    #[error("ResolutionTooSmall: every grid resolution must be >= 2, got {0:?}")]
    ResolutionTooSmall([usize; 3]),

    #[error("InvalidBounds: upper bound {upper:?} does not strictly dominate lower bound {lower:?}")]
    InvalidBounds { lower: [f64; 3], upper: [f64; 3] },

    #[error("GridTooLarge: {count} samples exceeds the maximum of {max}")]
    GridTooLarge { count: usize, max: usize },

    #[error("OutOfFrustum: point projects to ({u}, {v}) outside the image")]
    OutOfFrustum { u: f64, v: f64 },

    #[error("MaskedSurfacePixel: point projects onto masked pixel {index}")]
    MaskedSurfacePixel { index: usize },

    #[error("AllPointsOutOfFrustum: none of the {count} grid samples project into the image")]
    AllPointsOutOfFrustum { count: usize },

    #[error("EmptyOverlap: no pixel is valid in both maps")]
    EmptyOverlap,

    #[error("ZeroMedian: median of the {which} map is zero")]
    ZeroMedian { which: &'static str },

    #[error("CameraOutsideLumen: camera is {clearance} from the wall (needs > 0.01)")]
    CameraOutsideLumen { clearance: f64 },

    #[error("InvalidScene: {0}")]
    InvalidScene(String),

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("DivergedLoss: total loss became {value} at iteration {iteration}")]
    DivergedLoss { iteration: usize, value: f64 },

    #[error("IoFailure: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("MalformedHeader: {0}")]
    MalformedHeader(String),

    #[error("NegativeNonSentinel: pixel {index} holds {value}, only -1.0 marks a masked pixel")]
    NegativeNonSentinel { index: usize, value: f32 },

    #[error("MalformedManifest: line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
