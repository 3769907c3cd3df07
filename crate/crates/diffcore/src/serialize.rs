//! Binary tensor format: 8-byte magic, u32 dtype tag, u32 rank, u64 dims,
//! then raw values. All integers and values are little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::tensor::{numel, Tensor};

pub const MAGIC: [u8; 8] = *b"DCTENSOR";

/// Ranks above this are treated as corrupt input.
pub const MAX_RANK: usize = 16;

/// A decoded tensor whose element type is only known at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    Real32(Tensor<f32>),
    Real64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::Real32(_) => DType::Real32,
            AnyTensor::Real64(_) => DType::Real64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::Real32(t) => t.shape(),
            AnyTensor::Real64(t) => t.shape(),
        }
    }

    /// Converts to the requested element type, rounding if narrowing.
    pub fn cast<R: Real>(&self) -> Result<Tensor<R>> {
        match self {
            AnyTensor::Real32(t) => t.cast(),
            AnyTensor::Real64(t) => t.cast(),
        }
    }
}

pub fn encoded_len<R: Real>(t: &Tensor<R>) -> usize {
    16 + 8 * t.rank() + t.size_bytes()
}

pub fn encode<R: Real>(t: &Tensor<R>, out: &mut Vec<u8>) {
    out.reserve(encoded_len(t));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&R::DTYPE.tag().to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn to_bytes<R: Real>(t: &Tensor<R>) -> Vec<u8> {
    let mut out = Vec::new();
    encode(t, &mut out);
    out
}

pub fn write_tensor<R: Real>(t: &Tensor<R>, w: &mut impl Write) -> Result<()> {
    w.write_all(&to_bytes(t))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated {what}: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn values<R: Real>(shape: &[usize], raw: &[u8]) -> Result<Tensor<R>> {
    let size = std::mem::size_of::<R>();
    Tensor::new(shape, raw.chunks_exact(size).map(R::read_le).collect())
}

/// Decodes one tensor from the front of `bytes`, returning it together with
/// the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(AnyTensor, usize)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let tag = c.u32("dtype tag")?;
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag}")))?;
    let rank = c.u32("rank")? as usize;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let d = c.u64("dims")?;
        let d = usize::try_from(d).map_err(|_| Error::Format(format!("dim {i} too large")))?;
        shape.push(d);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let nbytes = count
        .checked_mul(dtype.size_of())
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    // length is validated before any allocation sized by the header
    let raw = c.take(nbytes, "values")?;
    debug_assert_eq!(numel(&shape), count);
    let t = match dtype {
        DType::Real32 => AnyTensor::Real32(values(&shape, raw)?),
        DType::Real64 => AnyTensor::Real64(values(&shape, raw)?),
    };
    Ok((t, c.pos))
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let (t, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(t)
}

/// Decodes one tensor and converts it to `R`.
pub fn decode_as<R: Real>(bytes: &[u8]) -> Result<Tensor<R>> {
    decode(bytes)?.cast()
}

pub fn read_tensor<R: Real>(r: &mut impl Read) -> Result<Tensor<R>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_as(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(&[2], vec![1.0, -2.0]).unwrap();
        let b = to_bytes(&t);
        assert_eq!(&b[..8], b"DCTENSOR");
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..24], &2u64.to_le_bytes());
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), encoded_len(&t));
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::<f64>::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = to_bytes(&t);
        assert!(decode(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = b.clone();
        bad[8] = 9;
        assert!(decode(&bad).is_err());
        let mut huge = b.clone();
        huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&huge).is_err());
    }
}
