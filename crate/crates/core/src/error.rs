use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::data_model::MotionGrade;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("unknown {kind} label `{label}`")]
    UnknownLabel { kind: &'static str, label: String },

    #[error("manifest {}: {reason}", path.display())]
    Manifest { path: PathBuf, reason: String },

    #[error("image {}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("no samples for grade {0}")]
    EmptyGrade(MotionGrade),

    #[error("label {0} has no positive partner in the batch")]
    NoPositives(usize),

    #[error("class-balanced sampling infeasible: {0}")]
    Sampler(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("encoder fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error(
        "pretrained weights not found at {}; export torchvision resnet18 weights to a \
         safetensors file at that path (or point AUTOMAC_WEIGHTS_DIR at a directory holding \
         resnet18.safetensors), or set `pretrained = false`",
        path.display()
    )]
    PretrainedUnavailable { path: PathBuf },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Unsupported(_) | Error::PretrainedUnavailable { .. } => 2,
            Error::FingerprintMismatch { .. } | Error::Contract(_) => 4,
            _ => 3,
        }
    }
}
