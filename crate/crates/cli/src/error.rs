use std::path::PathBuf;

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: u8 = 0;
    /// Command-line usage errors (reported by the argument parser).
    pub const USAGE: u8 = 2;
    /// Invalid configuration values or config file contents.
    pub const CONFIG: u8 = 3;
    /// Filesystem errors.
    pub const IO: u8 = 4;
    /// Malformed input files: NIfTI, manifests, checkpoints, JSON.
    pub const DATA: u8 = 5;
    /// Dataset protocol errors: empty classes or splits, unknown subjects,
    /// too few samples, unlabeled records, vote failures.
    pub const PROTOCOL: u8 = 6;
    /// Shape or numeric failures inside the engine.
    pub const NUMERIC: u8 = 7;
    /// A finite-difference check exceeded its tolerance.
    pub const GRADCHECK: u8 = 8;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mp3dcnn::Error),
    #[error("config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("gradient check failed for {0}")]
    GradcheckFailed(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use mp3dcnn::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::ConfigFile { .. } => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::GradcheckFailed(_) => exit::GRADCHECK,
            CliError::Core(e) => match e {
                E::InvalidConfig(_) | E::BadShape { .. } | E::BadRange { .. } => exit::CONFIG,
                E::Io { .. } => exit::IO,
                E::BadMagic(_)
                | E::UnsupportedDatatype { .. }
                | E::TruncatedFile { .. }
                | E::HeaderPairUnsupported
                | E::BadHeader(_)
                | E::ChecksumMismatch { .. }
                | E::UnknownTensorName(_)
                | E::MissingTensor(_)
                | E::BadCheckpoint(_)
                | E::BadManifest(_)
                | E::Json(_) => exit::DATA,
                E::TooFewSamples { .. }
                | E::EmptyClass(_)
                | E::UnknownSubject(_)
                | E::Unlabeled(_)
                | E::EmptySplit(_)
                | E::RaggedMatrix { .. }
                | E::UnresolvedTie(_)
                | E::EmptyTestSet => exit::PROTOCOL,
                E::ShapeMismatch { .. }
                | E::DegenerateOutput { .. }
                | E::DegenerateBatch { .. }
                | E::StaleCache(_)
                | E::LabelDomain(_) => exit::NUMERIC,
            },
        }
    }
}
