//! `CPT1` binary tensor files.
//!
//! Layout: magic `CPT1`, one dtype byte (0 = f32, 1 = f64), one rank byte,
//! `rank` little-endian u64 extents, then the row-major little-endian payload.

use std::fs;
use std::path::Path;

use super::{check_shape, DType, Scalar, Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CPT1";

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + t.len() * T::DTYPE.size_of());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Reads the dtype and shape of an encoded tensor.
pub fn header(bytes: &[u8]) -> Result<(DType, Vec<usize>, usize)> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing CPT1 magic".into()));
    }
    let dtype = DType::from_code(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[4])))?;
    let rank = bytes[5] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let dims_end = 6 + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Format("truncated shape".into()));
    }
    let shape: Vec<usize> = bytes[6..dims_end]
        .chunks(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    Ok((dtype, shape, dims_end))
}

/// Decodes a tensor whose stored dtype must equal `T`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (dtype, shape, start) = header(bytes)?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "dtype mismatch: file holds {dtype:?}, expected {:?}",
            T::DTYPE
        )));
    }
    let n = check_shape(&shape).map_err(|e| Error::Format(e.to_string()))?;
    let width = dtype.size_of();
    let payload = &bytes[start..];
    if payload.len() != n * width {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            n * width
        )));
    }
    let data = payload.chunks(width).map(T::read_le).collect();
    Tensor::new(&shape, data)
}

/// Decodes any dtype, converting to `T`.
pub fn decode_as<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    match header(bytes)?.0 {
        DType::F32 => decode::<f32>(bytes).map(|t| t.cast()),
        DType::F64 => decode::<f64>(bytes).map(|t| t.cast()),
    }
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_as<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    decode_as(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(&[2, 1], vec![1.0, -2.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"CPT1");
        assert_eq!(b[4], 0);
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..14], &2u64.to_le_bytes());
        assert_eq!(&b[14..22], &1u64.to_le_bytes());
        assert_eq!(&b[22..26], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 30);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::<f64>::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = encode(&t);
        assert!(decode::<f64>(&b[..b.len() - 1]).is_err());
        assert!(decode::<f32>(&b).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode::<f64>(&bad).is_err());
        assert_eq!(decode_as::<f32>(&b).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            shape in proptest::collection::vec(1usize..5, 1..=4),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::tensor::Rng::new(seed);
            let t64: Tensor<f64> = rng.normal_tensor(&shape, 3.0).unwrap();
            let back = decode::<f64>(&encode(&t64)).unwrap();
            prop_assert!(back.shape() == t64.shape());
            prop_assert!(back.data().iter().zip(t64.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            let t32: Tensor<f32> = t64.cast();
            let back = decode::<f32>(&encode(&t32)).unwrap();
            prop_assert!(back.data().iter().zip(t32.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
