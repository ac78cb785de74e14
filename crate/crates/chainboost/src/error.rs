//! Error type shared across the crate.

use thiserror::Error;

/// Errors reported by library operations. Contract violations (index out of
/// range, mismatched clique kinds passed where a precondition forbids them)
/// panic instead; everything here is a recoverable input problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("label space needs at least two labels, got {0}")]
    TooFewLabels(usize),
    #[error("duplicate label name `{0}`")]
    DuplicateLabelName(String),
    #[error("track must contain at least one point")]
    EmptyTrack,
    #[error("non-finite observation channel {channel} at slice {slice}")]
    NonFiniteChannel { slice: usize, channel: usize },
    #[error("non-finite weight on feature {feature}")]
    NonFiniteWeight { feature: usize },
    #[error("normalization stats need strictly positive standard deviations (channel {0})")]
    NonPositiveStd(usize),
    #[error("labeling length {labeling} does not match sequence length {sequence}")]
    LengthMismatch { labeling: usize, sequence: usize },
    #[error("label index {label} out of range for {size} labels")]
    LabelOutOfRange { label: usize, size: usize },
    #[error("context window must be odd and >= 1, got {0}")]
    BadWindow(usize),
    #[error("enumeration over {states:.0} assignments exceeds the {limit:.0} limit")]
    InstanceTooLarge { states: f64, limit: f64 },
    #[error(
        "sequence {sequence}: log weight {log_weight:.3} exceeds 700, training diverged; \
         rerun with a finite sigma"
    )]
    Diverged { sequence: usize, log_weight: f64 },
    #[error("sequence {0} has no observed slot")]
    NoObservedSlot(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("mask fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("feature set has no label-label features")]
    NoLabelPairFeatures,
    #[error("prediction/ground-truth mismatch: {0}")]
    EvalMismatch(String),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn malformed(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }
}
