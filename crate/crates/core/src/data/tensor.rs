//! The SEGT binary tensor container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "SEGT" | u32 version (=1) | u8 dtype (0=f32, 1=u16) | u8 ndim (1..=3) | ndim x u32 dims | payload
//! ```
//!
//! The payload holds `product(dims)` values in row-major order (last dim
//! fastest). There is no padding and no footer.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SEGT";
pub const VERSION: u32 = 1;

const HEADER_FIXED: usize = 4 + 4 + 1 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U16,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::U16 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::U16),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::U16 => "u16",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

/// An n-dimensional (1 to 3) row-major tensor as stored in a SEGT file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<u32>,
    data: TensorData,
}

fn element_count(dims: &[u32]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::DimOverflow(dims.to_vec()))
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::UnsupportedRank(dims.len() as u8));
        }
        let n = element_count(&dims)?;
        let len = match &data {
            TensorData::F32(v) => v.len(),
            TensorData::U16(v) => v.len(),
        };
        if n != len {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {n} values, got {len}"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f32(dims: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(values))
    }

    pub fn from_u16(dims: Vec<u32>, values: Vec<u16>) -> Result<Self> {
        Self::new(dims, TensorData::U16(values))
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::U16(_) => DType::U16,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U16(_) => Err(Error::DtypeMismatch {
                expected: "f32",
                found: "u16",
            }),
        }
    }

    pub fn as_u16(&self) -> Result<&[u16]> {
        match &self.data {
            TensorData::U16(v) => Ok(v),
            TensorData::F32(_) => Err(Error::DtypeMismatch {
                expected: "u16",
                found: "f32",
            }),
        }
    }

    pub fn into_f32(self) -> Result<(Vec<u32>, Vec<f32>)> {
        match self.data {
            TensorData::F32(v) => Ok((self.dims, v)),
            TensorData::U16(_) => Err(Error::DtypeMismatch {
                expected: "f32",
                found: "u16",
            }),
        }
    }

    pub fn into_u16(self) -> Result<(Vec<u32>, Vec<u16>)> {
        match self.data {
            TensorData::U16(v) => Ok((self.dims, v)),
            TensorData::F32(_) => Err(Error::DtypeMismatch {
                expected: "u16",
                found: "f32",
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dtype = self.dtype();
        let n = match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::U16(v) => v.len(),
        };
        let mut out = Vec::with_capacity(HEADER_FIXED + 4 * self.dims.len() + n * dtype.width());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(dtype.code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                expected: HEADER_FIXED,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        if bytes.len() < HEADER_FIXED {
            return Err(Error::Truncated {
                expected: HEADER_FIXED,
                found: bytes.len(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(bytes[8])?;
        let ndim = bytes[9];
        if !(1..=3).contains(&ndim) {
            return Err(Error::UnsupportedRank(ndim));
        }
        let header = HEADER_FIXED + 4 * ndim as usize;
        if bytes.len() < header {
            return Err(Error::Truncated {
                expected: header,
                found: bytes.len(),
            });
        }
        let dims: Vec<u32> = bytes[HEADER_FIXED..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let n = element_count(&dims)?;
        let payload_len = n
            .checked_mul(dtype.width())
            .and_then(|p| p.checked_add(header))
            .ok_or_else(|| Error::DimOverflow(dims.clone()))?;
        if bytes.len() < payload_len {
            return Err(Error::Truncated {
                expected: payload_len,
                found: bytes.len(),
            });
        }
        if bytes.len() > payload_len {
            return Err(Error::TrailingBytes(bytes.len() - payload_len));
        }
        let payload = &bytes[header..];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U16 => TensorData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn store_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&tensor.to_bytes())
        .map_err(|e| Error::io(path, e))
}
