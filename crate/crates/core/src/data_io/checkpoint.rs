//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | field        | bytes                                              |
//! |--------------|----------------------------------------------------|
//! | magic        | `MP3DCKPT`                                         |
//! | version      | u32, currently 1                                   |
//! | header       | u32 length + UTF-8 JSON (`kind`, `arch`, `meta`)   |
//! | tensor count | u32                                                |
//! | tensors      | per tensor: u16 name length, name, u8 dtype tag (0 = f32, 1 = f64), u8 rank, rank × u64 extents, raw LE scalars |
//! | checksum     | 32-byte SHA-256 of every preceding byte            |
//!
//! Tensors appear in [`Mp3dcnnParams::named_tensors`] order, trainable
//! tensors first, then batch-norm running statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ArchConfig, ModelKind, Mp3dcnnParams};
use crate::tensor::{Precision, Rng, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"MP3DCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub arch: ArchConfig,
    /// Free-form provenance (epoch, validation accuracy, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// A stored tensor before it is bound to a parameter slot.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    Single(Tensor<f32>),
    Double(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::Single(t) => t.shape(),
            StoredTensor::Double(t) => t.shape(),
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            StoredTensor::Single(_) => Precision::Single,
            StoredTensor::Double(_) => Precision::Double,
        }
    }

    pub fn to<T: Scalar>(&self) -> Tensor<T> {
        match self {
            StoredTensor::Single(t) => t.cast(),
            StoredTensor::Double(t) => t.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, StoredTensor)>,
}

pub fn encode_checkpoint<T: Scalar>(params: &Mp3dcnnParams<T>, meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        kind: params.kind,
        arch: params.arch.clone(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let tensors = params.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::PRECISION.tag());
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn write_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    params: &Mp3dcnnParams<T>,
    meta: serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::BadCheckpoint(format!("unexpected end of data at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Verifies the checksum and decodes every tensor without binding them.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + CHECKSUM_LEN || bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpoint("missing checkpoint magic".into()));
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let computed = Sha256::digest(body);
    if computed.as_slice() != stored {
        return Err(Error::ChecksumMismatch {
            stored: hex::encode(stored),
            computed: hex::encode(computed),
        });
    }

    let mut c = Cursor { bytes: body, at: 8 };
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadCheckpoint(format!("unsupported version {version}")));
    }
    let header_len = c.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(c.take(header_len)?)?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::BadCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let tag = c.u8()?;
        let precision =
            Precision::from_tag(tag).ok_or_else(|| Error::BadCheckpoint(format!("unknown dtype tag {tag}")))?;
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::BadCheckpoint(format!("tensor `{name}` is too large")))?;
        let width = precision.byte_width();
        let raw = c.take(n.checked_mul(width).ok_or_else(|| Error::BadCheckpoint("overflow".into()))?)?;
        let tensor = match precision {
            Precision::Single => StoredTensor::Single(Tensor::from_vec(
                &shape,
                raw.chunks_exact(width).map(f32::read_le).collect(),
            )?),
            Precision::Double => StoredTensor::Double(Tensor::from_vec(
                &shape,
                raw.chunks_exact(width).map(f64::read_le).collect(),
            )?),
        };
        tensors.push((name, tensor));
    }
    if c.at != body.len() {
        return Err(Error::BadCheckpoint(format!("{} trailing bytes", body.len() - c.at)));
    }
    Ok(Checkpoint { header, tensors })
}

impl Checkpoint {
    /// Binds the stored tensors to a freshly built parameter set of `kind`
    /// (the stored kind when `None`). Every slot must be filled exactly once.
    pub fn into_params<T: Scalar>(self, kind: Option<ModelKind>) -> Result<Mp3dcnnParams<T>> {
        let kind = kind.unwrap_or(self.header.kind);
        let mut params = Mp3dcnnParams::<T>::init(kind, &self.header.arch, &Rng::new(0))?;
        let mut filled = std::collections::HashSet::new();
        for (name, stored) in &self.tensors {
            if !filled.insert(name.as_str()) {
                return Err(Error::BadCheckpoint(format!("tensor `{name}` appears twice")));
            }
            params.set_tensor(name, stored.to())?;
        }
        let names: Vec<&'static str> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        if let Some(missing) = names.into_iter().find(|n| !filled.contains(n)) {
            return Err(Error::MissingTensor(missing.to_string()));
        }
        Ok(params)
    }
}

/// Reads a checkpoint and binds it as `kind` (or its stored kind).
pub fn read_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    kind: Option<ModelKind>,
) -> Result<(Mp3dcnnParams<T>, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = decode_checkpoint(&bytes)?;
    let header = ckpt.header.clone();
    Ok((ckpt.into_params(kind)?, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kind: ModelKind) -> Mp3dcnnParams<f64> {
        let mut p = Mp3dcnnParams::init(kind, &ArchConfig::reduced(), &Rng::new(9)).unwrap();
        p.bn2.running_var = Tensor::from_vec(&[4], vec![0.5, 1.5, 2.5, 3.5]).unwrap();
        p
    }

    #[test]
    fn round_trip_is_bitwise() {
        for kind in [ModelKind::Mp3dcnn, ModelKind::Baseline3dcnn] {
            let p = params(kind);
            let bytes = encode_checkpoint(&p, serde_json::json!({"epoch": 3})).unwrap();
            let ck = decode_checkpoint(&bytes).unwrap();
            assert_eq!(ck.header.meta["epoch"], 3);
            assert_eq!(ck.into_params::<f64>(None).unwrap(), p);
        }
        let single = params(ModelKind::Mp3dcnn).cast::<f32>();
        let bytes = encode_checkpoint(&single, serde_json::Value::Null).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap().into_params::<f32>(None).unwrap(), single);
    }

    #[test]
    fn every_flipped_byte_is_detected() {
        let bytes = encode_checkpoint(&params(ModelKind::Baseline3dcnn), serde_json::Value::Null).unwrap();
        for at in (8..bytes.len()).step_by(97) {
            let mut bad = bytes.clone();
            bad[at] ^= 0x20;
            assert!(matches!(decode_checkpoint(&bad), Err(Error::ChecksumMismatch { .. })), "byte {at}");
        }
    }

    #[test]
    fn baseline_cannot_load_as_full_model() {
        let bytes = encode_checkpoint(&params(ModelKind::Baseline3dcnn), serde_json::Value::Null).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert!(matches!(
            ck.clone().into_params::<f64>(Some(ModelKind::Mp3dcnn)),
            // cls1 is narrower in the baseline, so binding fails on its shape
            // or on the absent branch tensors
            Err(Error::MissingTensor(_)) | Err(Error::ShapeMismatch { .. })
        ));
        let mut no_cls = ck.clone();
        no_cls.tensors.retain(|(n, _)| !n.starts_with("cls1"));
        assert!(matches!(
            no_cls.into_params::<f64>(Some(ModelKind::Mp3dcnn)),
            Err(Error::MissingTensor(n)) if n.starts_with("branch1")
        ));
        let full = encode_checkpoint(&params(ModelKind::Mp3dcnn), serde_json::Value::Null).unwrap();
        assert!(matches!(
            decode_checkpoint(&full).unwrap().into_params::<f64>(Some(ModelKind::Baseline3dcnn)),
            Err(Error::UnknownTensorName(n)) if n.starts_with("branch")
        ));
    }
}
