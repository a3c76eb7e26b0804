//! Labeled volume records and the on-disk manifest format.
//!
//! A manifest is a JSON document listing every volume with its subject,
//! stimulus and storage location. Volumes live either in packed raw files
//! (little-endian `f32`, one volume after another) or in `.nii` files. Paths
//! are resolved relative to the manifest's directory.
//!
//! ```json
//! {
//!   "format": "mp3dcnn-manifest",
//!   "version": 1,
//!   "shape": [24, 24, 24],
//!   "task": null,
//!   "records": [
//!     {"id": "s00-male_face-000", "path": "s00.f32", "offset": 0,
//!      "encoding": "raw_f32le", "subject": "s00", "stimulus": "male_face",
//!      "averaged_from": 1}
//!   ]
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::nifti::read_nifti1;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FORMAT: &str = "mp3dcnn-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stimulus {
    MaleFace,
    FemaleFace,
    NaturalObject,
    ArtificialObject,
}

impl Stimulus {
    pub const ALL: [Stimulus; 4] = [
        Stimulus::MaleFace,
        Stimulus::FemaleFace,
        Stimulus::NaturalObject,
        Stimulus::ArtificialObject,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stimulus::MaleFace => "male_face",
            Stimulus::FemaleFace => "female_face",
            Stimulus::NaturalObject => "natural_object",
            Stimulus::ArtificialObject => "artificial_object",
        }
    }

    pub fn is_face(self) -> bool {
        matches!(self, Stimulus::MaleFace | Stimulus::FemaleFace)
    }
}

impl fmt::Display for Stimulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stimulus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stimulus::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::BadManifest(format!("unknown stimulus `{s}`")))
    }
}

/// One labeled volume held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRecord {
    pub id: String,
    pub volume: Tensor<f32>,
    /// Class id under the task currently applied, if any.
    pub label: Option<u8>,
    pub subject: String,
    pub stimulus: Stimulus,
    /// Number of raw volumes averaged into this one (1 = raw).
    pub averaged_from: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Packed little-endian `f32` voxels in row-major order at `offset`.
    RawF32le,
    /// A single-file NIfTI-1 image; `offset` is ignored.
    Nifti1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub offset: u64,
    pub encoding: Encoding,
    pub subject: String,
    pub stimulus: Stimulus,
    #[serde(default = "one")]
    pub averaged_from: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub shape: [usize; 3],
    /// Task the records were balanced for, when the manifest was equalized.
    #[serde(default)]
    pub task: Option<String>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(shape: [usize; 3], records: Vec<ManifestRecord>) -> Self {
        DatasetManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            shape,
            task: None,
            records,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::BadManifest(format!("format is `{}`", self.format)));
        }
        if self.version != MANIFEST_VERSION {
            return Err(Error::BadManifest(format!("unsupported version {}", self.version)));
        }
        if self.shape.contains(&0) {
            return Err(Error::BadManifest(format!("empty volume shape {:?}", self.shape)));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.records.iter().find(|r| !seen.insert(r.id.as_str())) {
            return Err(Error::BadManifest(format!("duplicate record id `{}`", dup.id)));
        }
        Ok(())
    }

    /// Record counts per (subject, stimulus), in sorted order.
    pub fn group_counts(&self) -> BTreeMap<(String, Stimulus), usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry((r.subject.clone(), r.stimulus)).or_default() += 1;
        }
        counts
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads every volume of the manifest at `path`, in manifest order.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<VolumeRecord>)> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let records = load_records(&manifest, &manifest_dir(path))?;
    Ok((manifest, records))
}

/// Loads the manifest's volumes, resolving relative paths against `base`.
pub fn load_records(manifest: &DatasetManifest, base: &Path) -> Result<Vec<VolumeRecord>> {
    let shape = manifest.shape;
    let count: usize = shape.iter().product();
    let mut out = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let file = base.join(&rec.path);
        let volume = match rec.encoding {
            Encoding::RawF32le => {
                let mut f = std::fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
                let len = f.metadata().map_err(|e| Error::io(&file, e))?.len();
                let needed = rec.offset + 4 * count as u64;
                if len < needed {
                    return Err(Error::TruncatedFile { needed, found: len });
                }
                f.seek(SeekFrom::Start(rec.offset)).map_err(|e| Error::io(&file, e))?;
                let mut raw = vec![0u8; 4 * count];
                f.read_exact(&mut raw).map_err(|e| Error::io(&file, e))?;
                let data = raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                Tensor::from_vec(&shape, data)?
            }
            Encoding::Nifti1 => {
                let (_, v) = read_nifti1(&file)?;
                if v.shape() != shape {
                    return Err(Error::shape("manifest volume", &shape, v.shape()));
                }
                v.cast()
            }
        };
        if !volume.all_finite() {
            return Err(Error::BadManifest(format!("record `{}` has non-finite voxels", rec.id)));
        }
        out.push(VolumeRecord {
            id: rec.id.clone(),
            volume,
            label: None,
            subject: rec.subject.clone(),
            stimulus: rec.stimulus,
            averaged_from: rec.averaged_from,
        });
    }
    Ok(out)
}

/// Writes `records` as packed per-subject raw files next to a manifest at
/// `manifest_path`, and returns the manifest.
pub fn write_dataset(
    manifest_path: impl AsRef<Path>,
    records: &[VolumeRecord],
    task: Option<&str>,
) -> Result<DatasetManifest> {
    let manifest_path = manifest_path.as_ref();
    let first = records.first().ok_or(Error::BadManifest("no records to write".into()))?;
    let shape: [usize; 3] = first
        .volume
        .shape()
        .try_into()
        .map_err(|_| Error::shape("dataset volume", &[0, 0, 0], first.volume.shape()))?;
    let dir = manifest_dir(manifest_path);
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();

    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut entries = Vec::with_capacity(records.len());
    for rec in records {
        if rec.volume.shape() != shape {
            return Err(Error::shape("dataset volume", &shape, rec.volume.shape()));
        }
        let subject: String = rec
            .subject
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let name = format!("{stem}.{subject}.f32");
        let buf = files.entry(name.clone()).or_default();
        let offset = buf.len() as u64;
        for v in rec.volume.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ManifestRecord {
            id: rec.id.clone(),
            path: name.into(),
            offset,
            encoding: Encoding::RawF32le,
            subject: rec.subject.clone(),
            stimulus: rec.stimulus,
            averaged_from: rec.averaged_from,
        });
    }
    for (name, bytes) in &files {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = DatasetManifest::new(shape, entries);
    manifest.task = task.map(str::to_string);
    write_manifest(manifest_path, &manifest)?;
    Ok(manifest)
}
