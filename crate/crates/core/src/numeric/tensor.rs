use super::Real;
use crate::error::{invalid, Result};

/// Dense row-major array.
///
/// Inside the computation graph every tensor is two dimensional, with rows
/// indexing the minibatch; vectors are `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return invalid(format!("tensor shape {shape:?} must be non-empty and positive"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return invalid(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// `1 x n` row vector.
    pub fn row(values: &[F]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return invalid("cannot build a matrix from zero rows");
        };
        let cols = first.len();
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("rows have unequal lengths");
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Copy of columns `start..end` of a matrix.
    pub fn col_range(&self, start: usize, end: usize) -> Tensor<F> {
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&self.row_slice(r)[start..end]);
        }
        Tensor {
            shape: vec![rows, end - start],
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: F) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> F {
        super::dot(&self.data, &self.data)
    }

    pub fn same_shape(&self, other: &Tensor<F>) -> bool {
        self.shape == other.shape
    }

    pub fn max_abs_diff(&self, other: &Tensor<F>) -> F {
        self.data
            .iter()
            .zip(&other.data)
            .fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| G::lit(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// `self (m x k) * other^T (n x k) -> m x n`
    pub fn matmul_nt(&self, other: &Tensor<F>) -> Tensor<F> {
        let (m, k) = (self.rows(), self.cols());
        let n = other.rows();
        assert_eq!(k, other.cols(), "inner dimensions differ");
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a = self.row_slice(i);
            for j in 0..n {
                out.push(super::dot(a, other.row_slice(j)));
            }
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_nt_small() {
        let a = Tensor::matrix(1, 2, vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.matmul_nt(&w).data(), &[1.0, 11.0]);
    }

    #[test]
    fn col_range_copies_block() {
        let a = Tensor::matrix(2, 3, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.col_range(1, 3).data(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
