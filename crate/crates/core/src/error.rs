use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid shape {0:?}: every extent must be >= 1 and the element count must fit in usize")]
    InvalidShape(Vec<usize>),

    #[error("expected rank {expected}, got shape {got:?}")]
    Rank { expected: usize, got: Vec<usize> },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no feed for input node `{0}`")]
    MissingFeed(String),

    #[error("forward pass has not produced a value for node {0}")]
    ForwardNotRun(usize),

    #[error("loss node must be scalar, got shape {0:?}")]
    LossNotScalar(Vec<usize>),

    #[error("keep probability must be in (0, 1], got {0}")]
    InvalidKeepProb(f64),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: expected {expected} features, found {found}")]
    WrongWidth {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: label `{label}` is not binary")]
    NonBinaryLabel {
        path: String,
        line: usize,
        label: String,
    },

    #[error("dataset `{0}` has no positive instances")]
    NoPositives(String),

    #[error("need at least {needed} positive instances for {needed}-fold splitting, found {found}")]
    TooFewPositives { needed: usize, found: usize },

    #[error("curve metrics need both classes: {positives} positives, {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint does not match network: {0}")]
    CheckpointMismatch(String),

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("checkpoint format version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("checkpoint checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing run artifacts: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingArtifacts(Vec<PathBuf>),

    #[error("fold {fold} of repeat {repeat} failed: {source}")]
    Fold {
        repeat: usize,
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input (config, data files) rather
    /// than a failure while running. The CLI maps this onto its exit code.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::WrongWidth { .. }
            | Error::NonBinaryLabel { .. }
            | Error::NoPositives(_)
            | Error::TooFewPositives { .. }
            | Error::InvalidKeepProb(_)
            | Error::Empty(_) => true,
            Error::Fold { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
