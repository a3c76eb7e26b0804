//! Getting volumes in and parameters out: NIfTI-1 images, dataset
//! manifests, synthetic phantom datasets and binary checkpoints.

mod checkpoint;
mod dataset;
pub mod nifti;
mod synthetic;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader,
    StoredTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dataset::{
    load_dataset, load_records, read_manifest, write_dataset, write_manifest, DatasetManifest, Encoding,
    ManifestRecord, Stimulus, VolumeRecord, MANIFEST_FORMAT, MANIFEST_VERSION,
};
pub use nifti::{read_nifti1, read_nifti1_header, write_nifti1, Nifti1Header, NiftiDatatype, NiftiWriteOptions};
pub use synthetic::{default_centers, generate_synthetic_dataset, subject_id, SyntheticConfig, MIN_EXTENT};
