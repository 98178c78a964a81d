//! Binary tensor files.
//!
//! Layout: magic `MGT1`, one byte precision tag (0 = f32, 1 = f64), one byte
//! rank, `rank` little-endian u64 extents, then the row-major payload in
//! little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::{Precision, Real, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"MGT1";

/// A tensor read from disk whose precision is only known at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn precision(&self) -> Precision {
        match self {
            AnyTensor::F32(_) => Precision::F32,
            AnyTensor::F64(_) => Precision::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn to<F: Real>(&self) -> Tensor<F> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode_tensor<F: Real>(t: &Tensor<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + t.len() * F::PRECISION.size());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(F::PRECISION.tag());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < *pos + n {
        return Err(Error::Format {
            offset: *pos as u64,
            msg: format!(
                "truncated {what}: need {n} bytes, {} left",
                bytes.len() - *pos
            ),
        });
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn decode_payload<F: Real>(bytes: &[u8], pos: &mut usize, shape: &[usize]) -> Result<Tensor<F>> {
    let n: usize = shape.iter().product();
    let size = F::PRECISION.size();
    let raw = take(bytes, pos, n * size, "payload")?;
    let data = raw.chunks_exact(size).map(F::read_le).collect();
    Tensor::new(shape, data)
}

/// Decode one tensor starting at the beginning of `bytes`; returns it and the bytes consumed.
pub fn decode_tensor(bytes: &[u8]) -> Result<(AnyTensor, usize)> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {magic:02x?}, expected MGT1"),
        });
    }
    let tag = take(bytes, &mut pos, 1, "precision tag")?[0];
    let precision = Precision::from_tag(tag).ok_or_else(|| Error::Format {
        offset: 4,
        msg: format!("unknown precision tag {tag}"),
    })?;
    let rank = take(bytes, &mut pos, 1, "rank")?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let raw = take(bytes, &mut pos, 8, "extent")?;
        shape.push(u64::from_le_bytes(raw.try_into().unwrap()) as usize);
    }
    let t = match precision {
        Precision::F32 => AnyTensor::F32(decode_payload(bytes, &mut pos, &shape)?),
        Precision::F64 => AnyTensor::F64(decode_payload(bytes, &mut pos, &shape)?),
    };
    Ok((t, pos))
}

pub fn write_tensor<F: Real>(w: &mut impl Write, t: &Tensor<F>) -> Result<()> {
    w.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (t, used) = decode_tensor(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format {
            offset: used as u64,
            msg: format!("{} trailing bytes after tensor", bytes.len() - used),
        });
    }
    Ok(t)
}

pub fn save_tensor<F: Real>(path: &Path, t: &Tensor<F>) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<AnyTensor> {
    let mut f = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
        _ => e.into(),
    })?;
    read_tensor(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_f64(&[2], &[1.0, -2.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..4], b"MGT1");
        assert_eq!(b[4], 0);
        assert_eq!(b[5], 1);
        assert_eq!(&b[6..14], &2u64.to_le_bytes());
        assert_eq!(&b[14..18], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 22);
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::<f64>::zeros(&[3, 2]);
        let b = encode_tensor(&t);
        match decode_tensor(&b[..b.len() - 3]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 22),
            other => panic!("{other:?}"),
        }
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_tensor(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip(shape in proptest::collection::vec(0usize..4, 0..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) % 1000) as f64 * 0.37 - 100.0).collect();
            let t64 = Tensor::<f64>::new(&shape, data).unwrap();
            let (back, used) = decode_tensor(&encode_tensor(&t64)).unwrap();
            prop_assert_eq!(used, encode_tensor(&t64).len());
            prop_assert_eq!(back, AnyTensor::F64(t64.clone()));
            let t32: Tensor<f32> = t64.cast();
            let (back, _) = decode_tensor(&encode_tensor(&t32)).unwrap();
            prop_assert_eq!(back, AnyTensor::F32(t32));
        }
    }
}
