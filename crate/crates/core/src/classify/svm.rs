use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numeric::Tensor;

/// One-vs-rest linear SVMs, one row of `weights` per class in `classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub classes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub c: f64,
}

impl LinearSvm {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// `w . x + b` for every class.
    pub fn decision(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }
}

/// `(1/(2C)) |w|^2 + mean_i max(0, 1 - y_i (w . x_i + b))`.
pub fn svm_objective(x: &Tensor<f64>, y: &[f64], w: &[f64], b: f64, c: f64) -> f64 {
    let reg = w.iter().map(|v| v * v).sum::<f64>() / (2.0 * c);
    let hinge: f64 = (0..x.rows())
        .map(|i| {
            let m = y[i] * (x.row_slice(i).iter().zip(w).map(|(a, v)| a * v).sum::<f64>() + b);
            (1.0 - m).max(0.0)
        })
        .sum();
    reg + hinge / x.rows() as f64
}

/// Binary SVM by full-batch subgradient descent with step `C / t`,
/// returning the average of all iterates. The bias is not regularized.
pub fn train_binary(x: &Tensor<f64>, y: &[f64], c: f64, iters: usize) -> (Vec<f64>, f64) {
    let (n, d) = (x.rows(), x.cols());
    let lambda = 1.0 / c;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut w_avg = vec![0.0; d];
    let mut b_avg = 0.0;
    let mut gw = vec![0.0; d];
    for t in 1..=iters {
        gw.iter_mut().zip(&w).for_each(|(g, v)| *g = lambda * v);
        let mut gb = 0.0;
        for i in 0..n {
            let row = x.row_slice(i);
            let m = y[i] * (row.iter().zip(&w).map(|(a, v)| a * v).sum::<f64>() + b);
            if m < 1.0 {
                for (g, a) in gw.iter_mut().zip(row) {
                    *g -= y[i] * a / n as f64;
                }
                gb -= y[i] / n as f64;
            }
        }
        let eta = 1.0 / (lambda * t as f64);
        for (v, g) in w.iter_mut().zip(&gw) {
            *v -= eta * g;
        }
        b -= eta * gb;
        let k = t as f64;
        for (a, v) in w_avg.iter_mut().zip(&w) {
            *a += (v - *a) / k;
        }
        b_avg += (b - b_avg) / k;
    }
    (w_avg, b_avg)
}

/// Default number of descent iterations.
pub const SVM_ITERS: usize = 2000;

/// One-vs-rest training for each class in `classes`; every class needs
/// both positive and negative examples.
pub fn svm_train(x: &Tensor<f64>, labels: &[usize], classes: &[usize], c: f64) -> Result<LinearSvm> {
    if x.rows() < 2 || labels.len() != x.rows() {
        return invalid("SVM training needs at least two labeled rows");
    }
    if !(c > 0.0) {
        return invalid("SVM C must be positive");
    }
    if !x.is_finite() {
        return invalid("SVM features contain non-finite values");
    }
    let mut weights = Vec::with_capacity(classes.len());
    let mut bias = Vec::with_capacity(classes.len());
    for &class in classes {
        let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
        if y.iter().all(|&v| v > 0.0) || y.iter().all(|&v| v < 0.0) {
            return invalid(format!("class {class} needs both positive and negative examples"));
        }
        let (w, b) = train_binary(x, &y, c, SVM_ITERS);
        weights.push(w);
        bias.push(b);
    }
    Ok(LinearSvm { classes: classes.to_vec(), weights, bias, c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngState;

    #[test]
    fn separable_line() {
        let x = Tensor::matrix(2, 1, vec![-1.0, 1.0]).unwrap();
        let svm = svm_train(&x, &[0, 1], &[1], 1.0).unwrap();
        assert!(svm.decision(&[-1.0])[0] < 0.0);
        assert!(svm.decision(&[1.0])[0] > 0.0);
    }

    #[test]
    fn single_class_rejected() {
        let x = Tensor::matrix(2, 1, vec![-1.0, 1.0]).unwrap();
        assert!(svm_train(&x, &[1, 1], &[1], 1.0).is_err());
    }

    #[test]
    fn duplicated_data_same_boundary() {
        let mut rng = RngState::new(7);
        let n = 30;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let labels: Vec<usize> = rows.iter().map(|r| usize::from(r[0] + 0.5 * r[1] > 0.0)).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let doubled: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
        let labels2: Vec<usize> = labels.iter().chain(&labels).copied().collect();
        let a = svm_train(&x, &labels, &[1], 1.0).unwrap();
        let b = svm_train(&Tensor::from_rows(&doubled).unwrap(), &labels2, &[1], 1.0).unwrap();
        for r in &rows {
            assert!((a.decision(r)[0] - b.decision(r)[0]).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_solution_hinge_is_one() {
        let mut rng = RngState::new(1);
        let x = Tensor::matrix(20, 2, (0..40).map(|_| rng.normal()).collect()).unwrap();
        let y: Vec<f64> = (0..20).map(|_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 }).collect();
        assert!(svm_objective(&x, &y, &[0.0, 0.0], 0.0, 1.0) <= 1.0);
    }

    #[test]
    fn descent_beats_the_zero_solution() {
        let mut rng = RngState::new(2);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..2).map(|_| rng.normal()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[1] > 0.2 { 1.0 } else { -1.0 }).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let (w, b) = train_binary(&x, &y, 1.0, SVM_ITERS);
        assert!(svm_objective(&x, &y, &w, b, 1.0) < svm_objective(&x, &y, &[0.0, 0.0], 0.0, 1.0));
    }
}
