use mpnp_autodiff::AutodiffError;
use mpnp_chem::SmilesError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("graph {index} is not featurized or has {found} feature columns, expected {expected}")]
    FeatureDim { index: usize, expected: usize, found: usize },

    #[error("graph {0} has no atoms")]
    EmptyGraph(usize),

    #[error("relation id {id} out of range for {count} relations")]
    UnknownRelation { id: usize, count: usize },

    #[error("scale count mismatch: {left} vs {right}")]
    ScaleMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("split failed: {0}")]
    Split(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("{path}: line {line}: {message}")]
    Dataset {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("SMILES {smiles:?}: {source}")]
    Smiles {
        smiles: String,
        #[source]
        source: SmilesError,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
