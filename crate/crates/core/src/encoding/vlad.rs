use super::codebook::Codebook;
use super::kmeans::nearest;
use crate::error::{invalid, Result};
use crate::numeric::Tensor;
use crate::recurrent::MgruConfig;

/// Which normalizations have been applied to a VLAD vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Normalization {
    pub ssr: bool,
    pub intra: bool,
    pub global: bool,
}

impl Normalization {
    pub const FULL: Normalization = Normalization { ssr: true, intra: true, global: true };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VladStatus {
    Ok,
    /// No descriptors were given; the vector is all zeros.
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VladVector {
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub status: VladStatus,
}

impl VladVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Per-center residual sums, concatenated center by center.
pub fn vlad_residuals(x: &Tensor<f64>, centers: &Tensor<f64>) -> Result<Vec<f64>> {
    let d = centers.cols();
    if x.rows() > 0 && x.cols() != d {
        return invalid(format!("descriptors have width {}, codebook expects {d}", x.cols()));
    }
    let mut u = vec![0.0; centers.rows() * d];
    for i in 0..x.rows() {
        let row = x.row_slice(i);
        let k = nearest(centers, row);
        for ((acc, v), c) in u[k * d..(k + 1) * d].iter_mut().zip(row).zip(centers.row_slice(k)) {
            *acc += v - c;
        }
    }
    Ok(u)
}

/// Signed square root, `sign(x) sqrt(|x|)`.
pub fn ssr(values: &mut [f64]) {
    for v in values {
        *v = v.signum() * v.abs().sqrt();
    }
}

/// Scales `values` to unit length; zero vectors are left alone.
pub fn l2_normalize(values: &mut [f64]) {
    let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        values.iter_mut().for_each(|v| *v /= n);
    }
}

/// Normalizes each `block`-wide chunk independently.
pub fn intra_normalize(values: &mut [f64], block: usize) {
    for chunk in values.chunks_mut(block) {
        l2_normalize(chunk);
    }
}

/// VLAD with SSR, intra-normalization and a final global l2 step. `x` is
/// projected by the codebook's PCA first when it has one.
pub fn vlad_encode(x: &Tensor<f64>, cb: &Codebook) -> Result<VladVector> {
    let len = cb.centers.rows() * cb.centers.cols();
    if x.rows() == 0 {
        return Ok(VladVector {
            values: vec![0.0; len],
            normalization: Normalization::default(),
            status: VladStatus::EmptyInput,
        });
    }
    let projected;
    let input = match &cb.pca {
        Some(p) => {
            projected = p.project(x)?;
            &projected
        }
        None => x,
    };
    let mut values = vlad_residuals(input, &cb.centers)?;
    ssr(&mut values);
    intra_normalize(&mut values, cb.centers.cols());
    l2_normalize(&mut values);
    Ok(VladVector {
        values,
        normalization: Normalization::FULL,
        status: VladStatus::Ok,
    })
}

/// Splits each row of `states` into the mGRU groups and encodes each
/// group's rows with its own codebook.
pub fn encode_groups(states: &Tensor<f64>, cfg: &MgruConfig, codebooks: &[Codebook]) -> Result<Vec<VladVector>> {
    if codebooks.len() != cfg.k() {
        return invalid(format!("{} codebooks given for {} groups", codebooks.len(), cfg.k()));
    }
    if states.cols() != cfg.state_dim() {
        return invalid(format!("states have width {}, groups cover {}", states.cols(), cfg.state_dim()));
    }
    codebooks
        .iter()
        .enumerate()
        .map(|(i, cb)| {
            let (lo, hi) = cfg.group_range(i);
            vlad_encode(&states.col_range(lo, hi), cb)
        })
        .collect()
}

/// Elementwise mean of per-group decision values.
pub fn late_fuse(scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = scores.first() else {
        return invalid("nothing to fuse");
    };
    if scores.iter().any(|s| s.len() != first.len()) {
        return invalid("score vectors differ in length");
    }
    let n = scores.len() as f64;
    Ok((0..first.len()).map(|j| scores.iter().map(|s| s[j]).sum::<f64>() / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngState;
    use crate::recurrent::CouplingMode;

    fn cb(centers: Tensor<f64>) -> Codebook {
        Codebook { centers, pca: None }
    }

    #[test]
    fn residual_sum_example() {
        let x = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(vlad_residuals(&x, &c).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn signed_root_example() {
        let mut v = [4.0, -9.0];
        ssr(&mut v);
        assert_eq!(v, [2.0, -3.0]);
    }

    #[test]
    fn points_on_centers_give_zero() {
        let c = Tensor::matrix(2, 2, vec![0.0, 1.0, 5.0, 5.0]).unwrap();
        let x = Tensor::matrix(3, 2, vec![0.0, 1.0, 5.0, 5.0, 0.0, 1.0]).unwrap();
        let v = vlad_encode(&x, &cb(c)).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn empty_input_is_flagged() {
        let c = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let v = vlad_encode(&Tensor::zeros(&[0, 3]), &cb(c)).unwrap();
        assert_eq!(v.status, VladStatus::EmptyInput);
        assert_eq!(v.values, vec![0.0; 6]);
    }

    #[test]
    fn unit_norm_and_order_invariant() {
        let mut rng = RngState::new(9);
        let c = Tensor::matrix(3, 4, (0..12).map(|_| rng.normal()).collect()).unwrap();
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let mut shuffled = rows.clone();
        rng.shuffle(&mut shuffled);
        let a = vlad_encode(&x, &cb(c.clone())).unwrap();
        let b = vlad_encode(&Tensor::from_rows(&shuffled).unwrap(), &cb(c)).unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-12);
        for (p, q) in a.values.iter().zip(&b.values) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn groups_are_independent() {
        let cfg = MgruConfig::split_evenly(6, vec![1, 3, 6], CouplingMode::FastToSlow).unwrap();
        let mut rng = RngState::new(2);
        let states = Tensor::matrix(10, 6, (0..60).map(|_| rng.normal()).collect()).unwrap();
        let books: Vec<Codebook> = (0..3)
            .map(|_| cb(Tensor::matrix(2, 2, (0..4).map(|_| rng.normal()).collect()).unwrap()))
            .collect();
        let before = encode_groups(&states, &cfg, &books).unwrap();
        assert!(before.iter().all(|v| v.values.len() == 4));
        let mut zeroed = states.clone();
        for r in 0..10 {
            zeroed.row_slice_mut(r)[2..4].fill(0.0);
        }
        let after = encode_groups(&zeroed, &cfg, &books).unwrap();
        assert_eq!(before[0], after[0]);
        assert_ne!(before[1], after[1]);
        assert_eq!(before[2], after[2]);
        assert!(encode_groups(&states, &cfg, &books[..2]).is_err());
    }

    #[test]
    fn single_group_matches_plain_encoding() {
        let cfg = MgruConfig::single(3).unwrap();
        let mut rng = RngState::new(4);
        let states = Tensor::matrix(7, 3, (0..21).map(|_| rng.normal()).collect()).unwrap();
        let book = cb(Tensor::matrix(2, 3, (0..6).map(|_| rng.normal()).collect()).unwrap());
        let grouped = encode_groups(&states, &cfg, std::slice::from_ref(&book)).unwrap();
        assert_eq!(grouped[0], vlad_encode(&states, &book).unwrap());
    }

    #[test]
    fn fusion_is_a_mean() {
        assert_eq!(late_fuse(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(late_fuse(&[vec![0.3, 2.0], vec![0.3, 2.0]]).unwrap(), vec![0.3, 2.0]);
        assert!(late_fuse(&[]).is_err());
    }
}
