use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("zero-energy input: {0}")]
    ZeroEnergy(&'static str),
    #[error("non-finite sample in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("signal of {len} samples is shorter than one analysis window ({window})")]
    SignalTooShort { len: usize, window: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("energy decay curve bottoms out at {reached_db:.1} dB, fit needs {needed_db:.1} dB")]
    InsufficientDecay { reached_db: f64, needed_db: f64 },
    #[error("energy decay curve has no usable decay region between {upper_db} and {lower_db} dB")]
    NoDecayRegion { upper_db: f64, lower_db: f64 },
    #[error(
        "probe too short: {rows} equations for {unknowns} unknowns per band \
         (need >= 10x); use a probe of at least {required_seconds:.2} s"
    )]
    ProbeTooShort {
        rows: usize,
        unknowns: usize,
        required_seconds: f64,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the failure stems from caller-supplied values rather than
    /// the environment (files, OS).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Wav(_) | Error::Json(_))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
