use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown loss kind `{0}`")]
    UnknownLoss(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("no checkpoint at epoch {0}")]
    MissingCheckpoint(f64),
    #[error("run diverged at epoch {0}")]
    Diverged(f64),

    #[error("degenerate kernel: gram matrix has zero norm")]
    DegenerateKernel,
    #[error("degenerate normalizer: both classifiers are perfect but disagree")]
    DegenerateNormalizer,
    #[error("degenerate plane: anchors are collinear")]
    DegeneratePlane,
    #[error("zero gradient norm")]
    ZeroGradient,
    #[error("zero-length logit gradient centroid for class {0}")]
    ZeroCentroid(usize),
    #[error("gram size {size} exceeds configured cap {cap}")]
    MemoryGuard { size: usize, cap: usize },

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },
    #[error("config: unknown key `{key}` in section [{section}] (line {line})")]
    UnknownKey { section: String, key: String, line: usize },
    #[error("config: duplicate key `{key}` on lines {first} and {second}")]
    DuplicateKey { key: String, first: usize, second: usize },
    #[error("config: invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors that come from configuration files or values.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::ConfigSyntax { .. }
                | Error::UnknownKey { .. }
                | Error::DuplicateKey { .. }
                | Error::InvalidValue { .. }
        )
    }
}
