use thiserror::Error;

/// Error type shared by every module in the crate.
///
/// Variants are grouped by the process exit code they map to: usage errors
/// exit 1, data/format errors exit 2, numerical failures exit 3.
#[derive(Debug, Error)]
pub enum LabError {
    // ── usage (exit 1) ──
    #[error("usage error: {0}")]
    Usage(String),

    // ── data and format (exit 2) ──
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid geojson: {0}")]
    GeoJson(String),
    #[error("polygon must have at least 3 vertices")]
    DegeneratePolygon,
    #[error("band {band} of modality {modality} has zero variance over the training split")]
    ZeroVariance { modality: String, band: usize },
    #[error("input modality {0} is missing on tile {1}")]
    MissingInputModality(String, u64),
    #[error("tile {0} has no supervised pixels")]
    NoSupervisedPixels(u64),
    #[error("every modality is absent on the batch {{{0}}}")]
    AllModalitiesAbsent(String),
    #[error("metric undefined: {0}")]
    Metric(String),

    // ── numerical (exit 3) ──
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
}

impl LabError {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage(_) => 1,
            LabError::NonFinite { .. } | LabError::Diverged { .. } => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
