//! Codebook files.
//!
//! ```text
//! "VCBK" | version u32 | K u32 | D u32 | has_pca u32
//! [if has_pca: D_in u32 | mean f32 x D_in | projection f32 x (D x D_in)]
//! centers f32 x (K x D)
//! ```
//! Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::kmeans::kmeans_fit;
use super::pca::Pca;
use crate::binio::{put_f32s, put_u32, ByteReader};
use crate::error::{data, Error, Result};
use crate::numeric::{RngState, Tensor};

const MAGIC: &[u8; 4] = b"VCBK";
const VERSION: u32 = 1;

/// k-means centers in the (possibly PCA-reduced) descriptor space.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centers: Tensor<f64>,
    pub pca: Option<Pca>,
}

fn f32s(vals: &[f64]) -> impl Iterator<Item = f32> + '_ {
    vals.iter().map(|&v| v as f32)
}

fn tensor(rows: usize, cols: usize, vals: Vec<f32>) -> Result<Tensor<f64>> {
    let t = Tensor::matrix(rows, cols, vals.into_iter().map(f64::from).collect())
        .map_err(|e| Error::Data(e.to_string()))?;
    if !t.is_finite() {
        return data("codebook holds non-finite values");
    }
    Ok(t)
}

impl Codebook {
    /// Fits PCA down to `pca_dim` (when the input is wider) and then
    /// `centers` k-means centers on the projected samples.
    pub fn fit(x: &Tensor<f64>, centers: usize, pca_dim: usize, iters: usize, rng: &mut RngState) -> Result<Codebook> {
        let pca = Pca::fit(x, pca_dim)?;
        let projected = match &pca {
            Some(p) => p.project(x)?,
            None => x.clone(),
        };
        let fit = kmeans_fit(&projected, centers, iters, rng)?;
        Ok(Codebook { centers: fit.centers, pca })
    }

    pub fn num_centers(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.pca.as_ref().map_or(self.dim(), Pca::in_dim)
    }

    /// Stored values are rounded to f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.num_centers() as u32);
        put_u32(&mut out, self.dim() as u32);
        put_u32(&mut out, self.pca.is_some() as u32);
        if let Some(p) = &self.pca {
            put_u32(&mut out, p.in_dim() as u32);
            put_f32s(&mut out, f32s(&p.mean));
            put_f32s(&mut out, f32s(p.projection.data()));
        }
        put_f32s(&mut out, f32s(self.centers.data()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Codebook> {
        let mut r = ByteReader::new(bytes, "codebook");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return data(format!("unsupported codebook version {version}"));
        }
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let pca = match r.u32()? {
            0 => None,
            1 => {
                let din = r.u32()? as usize;
                let mean = tensor(1, din, r.f32s(din)?)?.into_data();
                let projection = tensor(d, din, r.f32s(d * din)?)?;
                Some(Pca { mean, projection })
            }
            other => return data(format!("invalid PCA flag {other}")),
        };
        let centers = tensor(k, d, r.f32s(k * d)?)?;
        r.finish()?;
        Ok(Codebook { centers, pca })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Codebook> {
        Self::from_bytes(&fs::read(path)?)
    }
}
