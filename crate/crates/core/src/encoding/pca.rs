use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Result};
use crate::numeric::Tensor;

/// Plain (unwhitened) PCA projection: `y = P (x - mean)` with orthonormal
/// rows in `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `out_dim x in_dim`.
    pub projection: Tensor<f64>,
}

impl Pca {
    /// Fits the top `target` components. Returns `None` when the input is
    /// already at most `target` wide.
    pub fn fit(x: &Tensor<f64>, target: usize) -> Result<Option<Pca>> {
        let (n, d) = (x.rows(), x.cols());
        if target == 0 {
            return invalid("PCA target dimension must be at least 1");
        }
        if d <= target {
            return Ok(None);
        }
        if n < 2 {
            return invalid("PCA needs at least two samples");
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row_slice(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let row = x.row_slice(i);
            for a in 0..d {
                let da = row[a] - mean[a];
                for b in a..d {
                    cov[(a, b)] += da * (row[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / (n - 1) as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
        let mut projection = Tensor::zeros(&[target, d]);
        for (r, &col) in order.iter().take(target).enumerate() {
            let v = eig.eigenvectors.column(col);
            // sign convention: largest-magnitude entry positive
            let pivot = (0..d).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for (dst, &s) in projection.row_slice_mut(r).iter_mut().zip(v.iter()) {
                *dst = sign * s;
            }
        }
        Ok(Some(Pca { mean, projection }))
    }

    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn project(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        if x.cols() != self.in_dim() {
            return invalid(format!("PCA expects width {}, got {}", self.in_dim(), x.cols()));
        }
        let mut out = Tensor::zeros(&[x.rows(), self.out_dim()]);
        let mut centered = vec![0.0; self.in_dim()];
        for i in 0..x.rows() {
            for ((c, v), m) in centered.iter_mut().zip(x.row_slice(i)).zip(&self.mean) {
                *c = v - m;
            }
            for r in 0..self.out_dim() {
                out.row_slice_mut(i)[r] = self.projection.row_slice(r).iter().zip(&centered).map(|(p, c)| p * c).sum();
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngState;

    #[test]
    fn narrow_input_skips() {
        let x = Tensor::matrix(3, 2, vec![0.0; 6]).unwrap();
        assert!(Pca::fit(&x, 2).unwrap().is_none());
    }

    #[test]
    fn rows_are_orthonormal_and_capture_the_main_axis() {
        let mut rng = RngState::new(5);
        let mut data = Vec::new();
        for _ in 0..200 {
            let t = 3.0 * rng.normal();
            data.extend_from_slice(&[t, t, 0.1 * rng.normal(), 0.1 * rng.normal()]);
        }
        let x = Tensor::matrix(200, 4, data).unwrap();
        let pca = Pca::fit(&x, 2).unwrap().unwrap();
        let p = &pca.projection;
        for a in 0..2 {
            for b in 0..2 {
                let dot: f64 = p.row_slice(a).iter().zip(p.row_slice(b)).map(|(u, v)| u * v).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.at(0, 0) - h).abs() < 1e-2 && (p.at(0, 1) - h).abs() < 1e-2);
        assert_eq!(pca.project(&x).unwrap().shape(), &[200, 2]);
    }
}
