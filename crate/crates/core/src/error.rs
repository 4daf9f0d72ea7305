use thiserror::Error;

use crate::molio::MolError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mol(#[from] MolError),
    #[error("motif of {size} heavy atoms exceeds the cap of {cap}")]
    MotifTooLarge { size: usize, cap: usize },
    #[error("molecule is not connected")]
    Disconnected,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unknown motif key {0}")]
    UnknownMotif(String),
    #[error("degenerate sampling: {0}")]
    Degenerate(String),
    #[error("vocabulary mismatch: expected {expected}, found {found}")]
    VocabularyMismatch { expected: String, found: String },
    #[error("shred policy mismatch: expected {expected}, found {found}")]
    PolicyMismatch { expected: String, found: String },
    #[error("fingerprint error: {0}")]
    Fingerprint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("missing 3D context: {0}")]
    MissingContext(String),
    #[error("invalid growth atom {atom}: {reason}")]
    InvalidAtom { atom: usize, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
