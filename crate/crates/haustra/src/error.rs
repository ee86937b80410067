/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what}: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    DimensionMismatch {
        what: &'static str,
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("image is {height}x{width}; both sides must be at least {min}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("pixel ({row},{col}) channel {channel} is {value}, outside [0,1]")]
    PixelOutOfRange {
        row: usize,
        col: usize,
        channel: usize,
        value: f32,
    },

    #[error("depth at valid pixel ({row},{col}) is {value}; valid depths must be finite and non-negative")]
    DepthOutOfRange { row: usize, col: usize, value: f64 },

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("feature sets come from different extractors: {left} vs {right}")]
    ExtractorMismatch { left: String, right: String },

    #[error("training diverged at epoch {epoch}, step {step}: {term} is not finite")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        term: String,
    },

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
