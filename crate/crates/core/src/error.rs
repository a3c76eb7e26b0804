use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid range: lo={lo} must not exceed hi={hi}")]
    BadRange { lo: f64, hi: f64 },
    #[error("{op} would produce an empty output for input shape {shape:?}")]
    DegenerateOutput { op: &'static str, shape: Vec<usize> },
    #[error("batch normalization needs at least 2 values per channel in train mode, got {count}")]
    DegenerateBatch { count: usize },
    #[error("cached activations do not match the gradient: {0}")]
    StaleCache(String),
    #[error("label {0} is not in {{0, 1}}")]
    LabelDomain(f64),

    #[error("bad NIfTI magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported NIfTI datatype code {datatype} (bitpix {bitpix})")]
    UnsupportedDatatype { datatype: i16, bitpix: i16 },
    #[error("file is truncated: needed {needed} bytes, found {found}")]
    TruncatedFile { needed: u64, found: u64 },
    #[error("header/image file pairs (magic \"ni1\") are not supported")]
    HeaderPairUnsupported,
    #[error("invalid NIfTI header: {0}")]
    BadHeader(String),

    #[error("invalid volume shape {shape:?}: {reason}")]
    BadShape { shape: Vec<usize>, reason: String },
    #[error("checkpoint checksum mismatch: stored {stored}, computed {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("unknown tensor name `{0}` in checkpoint")]
    UnknownTensorName(String),
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("malformed manifest: {0}")]
    BadManifest(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("class {0} has no records")]
    EmptyClass(u8),
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("record `{0}` has no label for the selected task")]
    Unlabeled(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("prediction matrix is ragged: row {row} has {got} entries, expected {expected}")]
    RaggedMatrix {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("tied vote on sample {0} and no probabilities were supplied to break it")]
    UnresolvedTie(usize),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
