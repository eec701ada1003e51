//! Frame-feature files.
//!
//! ```text
//! "FVEC" | version u32 = 1 | T u32 | D u32 | T x D f32, row-major
//! ```
//! All little-endian; payload values must be finite.

use std::fs;
use std::path::Path;

use crate::binio::{put_f32s, put_u32, ByteReader};
use crate::error::{data, invalid, Error, Result};
use crate::numeric::{Real, Tensor};

const MAGIC: &[u8; 4] = b"FVEC";
const VERSION: u32 = 1;

pub fn encode_features<F: Real>(x: &Tensor<F>) -> Result<Vec<u8>> {
    if x.shape().len() != 2 {
        return invalid("feature matrices are two-dimensional");
    }
    let vals: Vec<f32> = x.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return invalid("features must be finite in single precision");
    }
    let mut out = Vec::with_capacity(16 + 4 * vals.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, x.rows() as u32);
    put_u32(&mut out, x.cols() as u32);
    put_f32s(&mut out, vals);
    Ok(out)
}

pub fn decode_features<F: Real>(bytes: &[u8]) -> Result<Tensor<F>> {
    let mut r = ByteReader::new(bytes, "feature file");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return data(format!("unsupported feature file version {version}"));
    }
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    let expected = (t as u64) * (d as u64) * 4 + 16;
    if bytes.len() as u64 != expected {
        return data(format!("feature file holds {} bytes, header implies {expected}", bytes.len()));
    }
    let vals = r.f32s(t * d)?;
    r.finish()?;
    if vals.iter().any(|v| !v.is_finite()) {
        return data("feature file contains non-finite values");
    }
    Tensor::matrix(t, d, vals.into_iter().map(|v| F::lit(v as f64)).collect()).map_err(|e| Error::Data(e.to_string()))
}

pub fn write_features<F: Real>(path: &Path, x: &Tensor<F>) -> Result<()> {
    fs::write(path, encode_features(x)?)?;
    Ok(())
}

pub fn read_features<F: Real>(path: &Path) -> Result<Tensor<F>> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    decode_features(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(t in 1usize..6, d in 1usize..5, seed in any::<u64>()) {
            let mut rng = crate::numeric::RngState::new(seed);
            let x = Tensor::<f32>::matrix(t, d, (0..t * d).map(|_| rng.normal() as f32).collect()).unwrap();
            let bytes = encode_features(&x).unwrap();
            prop_assert_eq!(bytes.len(), 16 + 4 * t * d);
            let back: Tensor<f32> = decode_features(&bytes).unwrap();
            prop_assert_eq!(back.shape(), x.shape());
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_files() {
        let x = Tensor::<f32>::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let bytes = encode_features(&x).unwrap();
        assert!(decode_features::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut nan = bytes.clone();
        nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_features::<f32>(&nan).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(decode_features::<f32>(&v2).is_err());
        let inf = Tensor::<f64>::matrix(1, 1, vec![1e300]).unwrap();
        assert!(encode_features(&inf).is_err());
    }
}
