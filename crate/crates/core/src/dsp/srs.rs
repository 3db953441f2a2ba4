//! Orthonormal type-IV DCT used as the real-field spectral representation
//! of a windowed frame:
//!
//! `S[k] = √(2/N) Σ_n x[n] cos(π/N (n + ½)(k + ½))`
//!
//! The basis is symmetric and orthonormal, so the transform is its own inverse.

use crate::error::{Error, Result};
use crate::nn::real::{gemm, Layout};
use crate::nn::{Dims, Real, Tensor};

#[derive(Clone, Debug)]
pub struct SrsBasis<T> {
    n: usize,
    /// Row-major `n × n`, entry `(k, n)`.
    matrix: Vec<T>,
}

impl<T: Real> SrsBasis<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::Signal(format!("transform length must be even and positive, got {n}")));
        }
        let scale = (2.0 / n as f64).sqrt();
        let mut matrix = Vec::with_capacity(n * n);
        for k in 0..n {
            for i in 0..n {
                let arg = std::f64::consts::PI / n as f64 * (i as f64 + 0.5) * (k as f64 + 0.5);
                matrix.push(T::lit(scale * arg.cos()));
            }
        }
        Ok(SrsBasis { n, matrix })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn matrix(&self) -> &[T] {
        &self.matrix
    }

    /// The basis as a `(1, 1, N, N)` feature map for [`crate::nn::Tape::feature_matmul`].
    pub fn as_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(Dims::new(1, 1, self.n, self.n), self.matrix.clone()).expect("square basis")
    }

    pub fn forward(&self, frame: &[T]) -> Result<Vec<T>> {
        if frame.len() != self.n {
            return Err(Error::Signal(format!("expected a frame of {}, got {}", self.n, frame.len())));
        }
        let mut out = vec![T::zero(); self.n];
        gemm(1, self.n, self.n, frame, Layout::Normal, &self.matrix, Layout::Transposed, &mut out, false);
        Ok(out)
    }

    pub fn inverse(&self, coeffs: &[T]) -> Result<Vec<T>> {
        // Symmetric orthonormal basis.
        self.forward(coeffs)
    }

    /// Transforms every row of a row-major `rows × N` buffer in place.
    pub fn forward_rows(&self, rows: &mut [T]) -> Result<()> {
        if !rows.len().is_multiple_of(self.n) {
            return Err(Error::Signal(format!("buffer of {} is not a whole number of frames", rows.len())));
        }
        let m = rows.len() / self.n;
        let mut out = vec![T::zero(); rows.len()];
        gemm(m, self.n, self.n, rows, Layout::Normal, &self.matrix, Layout::Transposed, &mut out, false);
        rows.copy_from_slice(&out);
        Ok(())
    }
}

pub fn srs_forward<T: Real>(frame: &[T]) -> Result<Vec<T>> {
    SrsBasis::new(frame.len())?.forward(frame)
}

pub fn srs_inverse<T: Real>(coeffs: &[T]) -> Result<Vec<T>> {
    SrsBasis::new(coeffs.len())?.inverse(coeffs)
}
