//! STVT raw tensor encoding.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "STVT"
//! 4       4         version (u32 LE) = 1
//! 8       4         ndim (u32 LE)
//! 12      8·ndim    extents (u64 LE each)
//! ..      1         dtype (1 = f32 LE, 2 = f64 LE)
//! ..      n·size    payload, row-major
//! ```

use std::path::Path;

use super::{check_shape, DType, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STVT";
pub const VERSION: u32 = 1;

/// A decoded tensor of either element type.
#[derive(Debug, Clone, PartialEq)]
pub enum RawTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl RawTensor {
    pub fn dtype(&self) -> DType {
        match self {
            RawTensor::F32(_) => DType::F32,
            RawTensor::F64(_) => DType::F64,
        }
    }

    /// Convert to `T`, casting if the stored type differs.
    pub fn into_tensor<T: Scalar>(self) -> Tensor<T> {
        match self {
            RawTensor::F32(t) => t.cast(),
            RawTensor::F64(t) => t.cast(),
        }
    }

    /// Convert to `T`, refusing a cast.
    pub fn into_exact<T: Scalar>(self) -> Result<Tensor<T>> {
        if self.dtype() != T::DTYPE {
            return Err(Error::format(
                0,
                format!("expected dtype {}, found {}", T::DTYPE.name(), self.dtype().name()),
            ));
        }
        Ok(self.into_tensor())
    }
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 8 * t.ndim() + t.numel() * T::DTYPE.size());
    encode_into(t, &mut out);
    out
}

pub fn encode_into<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(T::DTYPE.code());
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.offset(),
                format!("truncated: need {n} bytes for {what}, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn payload<T: Scalar>(r: &mut Reader<'_>, shape: Vec<usize>, n: usize) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let bytes = r.take(n.checked_mul(size).unwrap_or(usize::MAX), "payload")?;
    let data = bytes.chunks_exact(size).map(T::read_le).collect();
    Ok(Tensor::from_parts(shape, data))
}

/// Decode one tensor from the front of `bytes`; returns it and the number of
/// bytes consumed. `base` offsets reported error positions.
pub fn decode_prefix(bytes: &[u8], base: u64) -> Result<(RawTensor, usize)> {
    let mut r = Reader { bytes, pos: 0, base };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(base, format!("bad magic {magic:?}, expected \"STVT\"")));
    }
    let at = r.offset();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}, expected {VERSION}")));
    }
    let at = r.offset();
    let ndim = r.u32("ndim")? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(Error::format(at, format!("unsupported ndim {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let at = r.offset();
        let d = r.u64("extent")?;
        shape.push(usize::try_from(d).map_err(|_| Error::format(at, "extent overflows usize"))?);
    }
    let n = check_shape(&shape)
        .ok()
        .and_then(|_| shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)))
        .ok_or_else(|| Error::format(at, format!("invalid extents {shape:?}")))?;
    let at = r.offset();
    let code = r.take(1, "dtype")?[0];
    let raw = match DType::from_code(code) {
        Some(DType::F32) => RawTensor::F32(payload(&mut r, shape, n)?),
        Some(DType::F64) => RawTensor::F64(payload(&mut r, shape, n)?),
        None => return Err(Error::format(at, format!("unknown dtype code {code}"))),
    };
    Ok((raw, r.pos))
}

/// Decode a complete buffer; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<RawTensor> {
    let (t, used) = decode_prefix(bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::format(used as u64, format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(t)
}

pub fn write_file<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<RawTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
