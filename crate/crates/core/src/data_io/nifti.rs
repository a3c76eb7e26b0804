//! Single-file NIfTI-1 (`.nii`) reading and writing.
//!
//! Only the fields needed to locate and decode voxels are interpreted. The
//! returned tensor has shape `dim[1..=dim[0]]` in row-major order, i.e. the
//! file's first (fastest-varying) axis becomes the tensor's first index.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag that precedes data in `.nii` files.
pub const MIN_VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
pub const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// Voxel encodings this reader accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    Int16,
    Float32,
    Float64,
}

impl NiftiDatatype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Float32 => 16,
            NiftiDatatype::Float64 => 64,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            NiftiDatatype::Int16 => 16,
            NiftiDatatype::Float32 => 32,
            NiftiDatatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            4 => Some(NiftiDatatype::Int16),
            16 => Some(NiftiDatatype::Float32),
            64 => Some(NiftiDatatype::Float64),
            _ => None,
        }
    }

    fn byte_width(self) -> usize {
        self.bitpix() as usize / 8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nifti1Header {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
    pub endianness: Endianness,
}

impl Nifti1Header {
    /// Extents `dim[1..=dim[0]]`.
    pub fn shape(&self) -> Vec<usize> {
        self.dim[1..=self.dim[0] as usize].iter().map(|&d| d as usize).collect()
    }

    /// Whether stored values are mapped through `slope·v + inter`.
    pub fn is_scaled(&self) -> bool {
        self.scl_slope != 0.0 && self.scl_slope.is_finite()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    endianness: Endianness,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut raw: [u8; N] = self.bytes[at..at + N].try_into().expect("in bounds");
        if self.endianness == Endianness::Big {
            raw.reverse();
        }
        raw
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.array(at))
    }

    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.array(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.array(at))
    }

    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.array(at))
    }
}

/// Parses and validates the 348-byte header at the start of `bytes`.
pub fn parse_header(bytes: &[u8]) -> Result<Nifti1Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::TruncatedFile {
            needed: HEADER_SIZE as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[OFF_MAGIC..OFF_MAGIC + 4].try_into().expect("4 bytes");
    if magic == MAGIC_PAIR {
        return Err(Error::HeaderPairUnsupported);
    }
    if magic != MAGIC_SINGLE {
        return Err(Error::BadMagic(magic));
    }

    let rank_le = i16::from_le_bytes([bytes[OFF_DIM], bytes[OFF_DIM + 1]]);
    let rank_be = i16::from_be_bytes([bytes[OFF_DIM], bytes[OFF_DIM + 1]]);
    let endianness = if (1..=7).contains(&rank_le) {
        Endianness::Little
    } else if (1..=7).contains(&rank_be) {
        Endianness::Big
    } else {
        return Err(Error::BadHeader(format!("dim[0] = {rank_le} is outside 1..=7 in either byte order")));
    };
    let r = Reader { bytes, endianness };

    let sizeof_hdr = r.i32(0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::BadHeader(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    let dim: [i16; 8] = std::array::from_fn(|i| r.i16(OFF_DIM + 2 * i));
    let pixdim: [f32; 8] = std::array::from_fn(|i| r.f32(OFF_PIXDIM + 4 * i));
    let header = Nifti1Header {
        sizeof_hdr,
        dim,
        datatype: r.i16(OFF_DATATYPE),
        bitpix: r.i16(OFF_BITPIX),
        pixdim,
        vox_offset: r.f32(OFF_VOX_OFFSET),
        scl_slope: r.f32(OFF_SCL_SLOPE),
        scl_inter: r.f32(OFF_SCL_INTER),
        magic,
        endianness,
    };

    let datatype = NiftiDatatype::from_code(header.datatype).ok_or(Error::UnsupportedDatatype {
        datatype: header.datatype,
        bitpix: header.bitpix,
    })?;
    if header.bitpix != datatype.bitpix() {
        return Err(Error::BadHeader(format!(
            "bitpix {} does not match datatype {}",
            header.bitpix, header.datatype
        )));
    }
    if let Some(&bad) = header.dim[1..=header.dim[0] as usize].iter().find(|&&d| d < 1) {
        return Err(Error::BadHeader(format!("non-positive extent {bad} in dim")));
    }
    let off = header.vox_offset;
    if !(off.is_finite() && off.fract() == 0.0 && off >= MIN_VOX_OFFSET as f32) {
        return Err(Error::BadHeader(format!("vox_offset {off} must be an integer ≥ 352")));
    }
    Ok(header)
}

/// Decodes a complete `.nii` image held in memory.
pub fn decode_nifti1(bytes: &[u8]) -> Result<(Nifti1Header, Tensor<f64>)> {
    let header = parse_header(bytes)?;
    let datatype = NiftiDatatype::from_code(header.datatype).expect("validated");
    let shape = header.shape();
    let count: usize = shape.iter().product();
    let start = header.vox_offset as usize;
    let needed = start + count * datatype.byte_width();
    if bytes.len() < needed {
        return Err(Error::TruncatedFile {
            needed: needed as u64,
            found: bytes.len() as u64,
        });
    }

    let r = Reader {
        bytes,
        endianness: header.endianness,
    };
    let width = datatype.byte_width();
    let raw = |i: usize| -> f64 {
        let at = start + i * width;
        match datatype {
            NiftiDatatype::Int16 => r.i16(at) as f64,
            NiftiDatatype::Float32 => r.f32(at) as f64,
            NiftiDatatype::Float64 => r.f64(at),
        }
    };
    let (slope, inter) = (header.scl_slope as f64, header.scl_inter as f64);
    let scaled = header.is_scaled();

    // File order has the first axis fastest; walk the row-major index and
    // map it to the file position.
    let file_strides = fortran_strides(&shape);
    let mut data = Vec::with_capacity(count);
    let mut index = vec![0usize; shape.len()];
    for _ in 0..count {
        let pos: usize = index.iter().zip(&file_strides).map(|(i, s)| i * s).sum();
        let v = raw(pos);
        data.push(if scaled { v * slope + inter } else { v });
        for axis in (0..shape.len()).rev() {
            index[axis] += 1;
            if index[axis] < shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    Ok((header, Tensor::from_vec(&shape, data)?))
}

/// Reads a `.nii` file from disk.
pub fn read_nifti1(path: impl AsRef<Path>) -> Result<(Nifti1Header, Tensor<f64>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nifti1(&bytes)
}

/// Reads only the header of a `.nii` file.
pub fn read_nifti1_header(path: impl AsRef<Path>) -> Result<Nifti1Header> {
    use std::io::Read;
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(HEADER_SIZE);
    file.take(HEADER_SIZE as u64)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    parse_header(&bytes)
}

fn fortran_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = Vec::with_capacity(shape.len());
    let mut acc = 1;
    for &e in shape {
        strides.push(acc);
        acc *= e;
    }
    strides
}

/// Encoding options for [`encode_nifti1`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NiftiWriteOptions {
    pub datatype: NiftiDatatype,
    pub endianness: Endianness,
    /// Stored value `s` represents `slope·s + inter` when `slope ≠ 0`.
    pub scl_slope: f32,
    pub scl_inter: f32,
    /// Voxel size in mm for every spatial axis.
    pub voxel_size: f32,
}

impl Default for NiftiWriteOptions {
    fn default() -> Self {
        NiftiWriteOptions {
            datatype: NiftiDatatype::Float32,
            endianness: Endianness::Little,
            scl_slope: 0.0,
            scl_inter: 0.0,
            voxel_size: 2.0,
        }
    }
}

/// Serializes a tensor of rank 1..=7 as a single-file NIfTI-1 image.
///
/// With scaling enabled the stored value is `(v − inter)/slope`, rounded to
/// the nearest integer for `Int16`; out-of-range integers saturate.
pub fn encode_nifti1(volume: &Tensor<f64>, opts: &NiftiWriteOptions) -> Result<Vec<u8>> {
    let shape = volume.shape();
    if shape.is_empty() || shape.len() > 7 || shape.iter().any(|&e| e == 0 || e > i16::MAX as usize) {
        return Err(Error::BadShape {
            shape: shape.to_vec(),
            reason: "NIfTI-1 needs rank 1..=7 with extents in 1..=32767".into(),
        });
    }
    let big = opts.endianness == Endianness::Big;
    let mut out = vec![0u8; MIN_VOX_OFFSET];
    let mut put = |at: usize, le: &[u8]| {
        let dst = &mut out[at..at + le.len()];
        dst.copy_from_slice(le);
        if big {
            dst.reverse();
        }
    };
    put(0, &(HEADER_SIZE as i32).to_le_bytes());
    let mut dim = [1i16; 8];
    dim[0] = shape.len() as i16;
    for (d, &e) in dim[1..].iter_mut().zip(shape) {
        *d = e as i16;
    }
    for (i, d) in dim.iter().enumerate() {
        put(OFF_DIM + 2 * i, &d.to_le_bytes());
    }
    put(OFF_DATATYPE, &opts.datatype.code().to_le_bytes());
    put(OFF_BITPIX, &opts.datatype.bitpix().to_le_bytes());
    for i in 0..8 {
        let v = if i == 0 { 1.0f32 } else { opts.voxel_size };
        put(OFF_PIXDIM + 4 * i, &v.to_le_bytes());
    }
    put(OFF_VOX_OFFSET, &(MIN_VOX_OFFSET as f32).to_le_bytes());
    put(OFF_SCL_SLOPE, &opts.scl_slope.to_le_bytes());
    put(OFF_SCL_INTER, &opts.scl_inter.to_le_bytes());
    out[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(&MAGIC_SINGLE);

    let scaled = opts.scl_slope != 0.0;
    let (slope, inter) = (opts.scl_slope as f64, opts.scl_inter as f64);
    let file_strides = fortran_strides(shape);
    let count = volume.len();
    let mut stored = vec![0.0f64; count];
    let row_strides = volume.strides();
    for (i, &v) in volume.data().iter().enumerate() {
        let pos: usize = row_strides
            .iter()
            .zip(shape)
            .zip(&file_strides)
            .map(|((&rs, &e), &fs)| (i / rs) % e * fs)
            .sum();
        stored[pos] = if scaled { (v - inter) / slope } else { v };
    }
    let width = opts.datatype.byte_width();
    out.reserve(count * width);
    for v in stored {
        let mut le = match opts.datatype {
            NiftiDatatype::Int16 => (v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).to_le_bytes().to_vec(),
            NiftiDatatype::Float32 => (v as f32).to_le_bytes().to_vec(),
            NiftiDatatype::Float64 => v.to_le_bytes().to_vec(),
        };
        if big {
            le.reverse();
        }
        out.extend_from_slice(&le);
    }
    Ok(out)
}

pub fn write_nifti1(path: impl AsRef<Path>, volume: &Tensor<f64>, opts: &NiftiWriteOptions) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti1(volume, opts)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
