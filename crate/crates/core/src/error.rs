use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumericsError {
    #[error("bit position {0} is outside 0..=15")]
    BitPosition(u32),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Blob(#[from] BlobError),
}

/// Structural problems found while decoding or validating a binary artifact.
/// Any of these means the layer must run on the baseline path.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlobError {
    #[error("bad magic: expected {expected:?}")]
    Magic { expected: &'static str },
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("truncated blob")]
    Truncated,
    #[error("trailing bytes after payload")]
    Trailing,
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("illegal index: {0}")]
    Index(String),
    #[error("row {row} has {count} entries, budget is {cap}")]
    Budget { row: usize, count: usize, cap: usize },
    #[error("duplicate entry at row {row}, lane {lane}")]
    Duplicate { row: usize, lane: usize },
    #[error("entries out of (row, lane) order at row {row}, lane {lane}")]
    Order { row: usize, lane: usize },
    #[error("inconsistent rewire group: {0}")]
    Group(String),
    #[error("invalid field: {0}")]
    Field(String),
}

impl BlobError {
    /// Short machine-readable reason used in enable diagnostics.
    pub fn reason(&self) -> &'static str {
        match self {
            BlobError::Magic { .. } => "magic",
            BlobError::Version(_) => "version",
            BlobError::Truncated | BlobError::Trailing => "length",
            BlobError::Crc { .. } => "crc",
            BlobError::Index(_) => "index",
            BlobError::Budget { .. } => "budget",
            BlobError::Duplicate { .. } | BlobError::Order { .. } => "duplicate",
            BlobError::Group(_) => "group",
            BlobError::Field(_) => "field",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("division factor {0} is not 2 or 3")]
    Div(u8),
    #[error("budget fraction {0} is outside [0, 1]")]
    Budget(f64),
    #[error("deadness threshold {0} must be finite and non-negative")]
    Threshold(f64),
    #[error("ranking shape does not match layer: {0}")]
    Shape(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("FaR configuration rejected, falling back to baseline: {0}")]
    Validation(#[from] BlobError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl SimError {
    /// True when the caller should rerun the layer on the baseline path.
    pub fn baseline_fallback(&self) -> bool {
        matches!(self, SimError::Validation(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trace does not match model: {0}")]
    Replay(String),
}
