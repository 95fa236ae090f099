use rand::Rng;

use super::scalar::Scalar;
use crate::{Error, Result};

/// Dense row-major tensor.
///
/// Rank 1 (vectors: biases, norm gains) and rank 2 (matrices: weights,
/// framed features) cover everything in this crate; the storage itself is
/// rank-agnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from a shape and matching row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || len != data.len() {
            return Err(Error::BadShape {
                op: "tensor",
                expected: format!("{} elements for shape", len),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-2 tensor filled by `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Xavier-uniform initialization for a `[fan_in, fan_out]` weight matrix:
    /// entries drawn from `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
    ///
    /// The same rule is applied to the depthwise conv kernel `[taps, channels]`,
    /// reading its shape the same way.
    pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let u: f64 = rng.gen::<f64>() * 2.0 - 1.0;
            data.push(T::from_f64(u * bound));
        }
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Rows of a rank-2 tensor (or the length of a rank-1 tensor).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// Row `r` of a rank-2 tensor as a slice.
    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Plain (non-recorded) matrix product for feature-space math that never
    /// needs gradients.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || other.rank() != 2 || self.cols() != other.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![T::zero(); m * n];
        super::kernels::mat_nn(&self.data, &other.data, m, k, n, &mut out);
        Tensor::new(vec![m, n], out)
    }

    /// Convert elementwise to another scalar type (via `f64`, lossless for
    /// `f32 -> f64`).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_rejects_mismatched_data_length() {
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("6 elements"), "got: {err}");
    }

    #[test]
    fn row_major_layout() {
        let t = Tensor::<f64>::from_fn(2, 3, |r, c| (r * 10 + c) as f64);
        assert_eq!(t.row(1), &[10.0, 11.0, 12.0]);
        assert_eq!(t.data()[3], 10.0);
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::<f32>::xavier_uniform(64, 32, &mut rng);
        let bound = (6.0f64 / 96.0).sqrt() as f32;
        assert!(a.data().iter().all(|v| v.abs() <= bound));
        // Not degenerate: draws actually spread over the interval.
        let spread = a.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(spread > 0.5 * bound);

        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let b = Tensor::<f32>::xavier_uniform(64, 32, &mut rng2);
        assert_eq!(a, b, "same seed must reproduce identical init");
    }

    #[test]
    fn cast_roundtrip_f32_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f32>::xavier_uniform(8, 8, &mut rng);
        let back: Tensor<f32> = a.cast::<f64>().cast();
        assert_eq!(a, back);
    }
}
