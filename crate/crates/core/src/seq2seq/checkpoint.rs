//! Binary parameter snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MVCK" | version u32 | width u8 (4 or 8) | config_len u32 | config JSON
//! count u32 | per parameter:
//!     name_len u32 | name utf-8 | ndim u32 | dims u32 x ndim | values
//! ```

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::binio::ByteReader;
use crate::error::{data, Error, Result};
use crate::numeric::{ParamStore, Real, Tensor};

const MAGIC: &[u8; 4] = b"MVCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint<F: Real>(store: &ParamStore<F>, cfg: &RunConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(F::WIDTH);
    let json = serde_json::to_vec(cfg).expect("config serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let value = store.value(id);
        out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

/// Parameters and config; values stored at the other precision are
/// converted.
pub fn decode_checkpoint<F: Real>(bytes: &[u8]) -> Result<(ParamStore<F>, RunConfig)> {
    let mut r = ByteReader::new(bytes, "checkpoint");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return data(format!("unsupported checkpoint version {version}"));
    }
    let width = r.u8()?;
    if width != 4 && width != 8 {
        return data(format!("invalid value width {width}"));
    }
    let json_len = r.u32()? as usize;
    let cfg = RunConfig::from_json(
        std::str::from_utf8(r.take(json_len)?).map_err(|e| Error::Data(e.to_string()))?,
    )?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Data(e.to_string()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).unwrap_or(usize::MAX);
        let raw = r.take(n.saturating_mul(width as usize))?;
        let values: Vec<F> = if width == 4 {
            raw.chunks_exact(4).map(|c| F::lit(f32::read_le(c) as f64)).collect()
        } else {
            raw.chunks_exact(8).map(|c| F::lit(f64::read_le(c))).collect()
        };
        let t = Tensor::new(shape, values).map_err(|e| Error::Data(e.to_string()))?;
        store
            .add(name, t)
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    r.finish()?;
    Ok((store, cfg))
}

pub fn save_checkpoint<F: Real>(path: &Path, store: &ParamStore<F>, cfg: &RunConfig) -> Result<()> {
    fs::write(path, encode_checkpoint(store, cfg))?;
    Ok(())
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<(ParamStore<F>, RunConfig)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), seed in 0u64..100) {
            let mut store = ParamStore::<f64>::new();
            let n = values.len();
            store.add("a.w", Tensor::matrix(1, n, values.clone()).unwrap()).unwrap();
            store.add("b", Tensor::scalar(seed as f64)).unwrap();
            let cfg = RunConfig { seed, ..RunConfig::default() };
            let (back, cfg2) = decode_checkpoint::<f64>(&encode_checkpoint(&store, &cfg)).unwrap();
            prop_assert_eq!(cfg2, cfg);
            prop_assert_eq!(back.len(), 2);
            for id in store.ids() {
                let other = back.id(store.name(id)).unwrap();
                prop_assert_eq!(back.value(other), store.value(id));
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_checkpoint::<f32>(b"NOPE").is_err());
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::row(&[1.0, 2.0])).unwrap();
        let bytes = encode_checkpoint(&store, &RunConfig::default());
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let (back, _) = decode_checkpoint::<f64>(&bytes).unwrap();
        assert_eq!(back.value(back.id("w").unwrap()).data(), &[1.0, 2.0]);
    }
}
