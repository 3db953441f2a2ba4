use std::fmt;

use crate::error::{Error, Result};
use crate::nn::Real;

/// Extents of a 4-axis tensor laid out row-major as (batch, channel, frame, feature).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Dims {
    pub batch: usize,
    pub channels: usize,
    pub frames: usize,
    pub features: usize,
}

impl Dims {
    pub const fn new(batch: usize, channels: usize, frames: usize, features: usize) -> Self {
        Dims { batch, channels, frames, features }
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.frames * self.features
    }

    pub fn to_array(self) -> [usize; 4] {
        [self.batch, self.channels, self.frames, self.features]
    }

    pub fn from_array(a: [usize; 4]) -> Self {
        Dims::new(a[0], a[1], a[2], a[3])
    }

    pub fn get(&self, axis: Axis) -> usize {
        self.to_array()[axis as usize]
    }

    pub fn with(self, axis: Axis, len: usize) -> Self {
        let mut a = self.to_array();
        a[axis as usize] = len;
        Dims::from_array(a)
    }

    /// `(outer, len, inner)` decomposition around `axis`.
    pub(crate) fn split_at(&self, axis: Axis) -> (usize, usize, usize) {
        let a = self.to_array();
        let i = axis as usize;
        let outer = a[..i].iter().product();
        let inner = a[i + 1..].iter().product();
        (outer, a[i], inner)
    }
}

impl fmt::Debug for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.batch, self.channels, self.frames, self.features)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Batch = 0,
    Channel = 1,
    Frame = 2,
    Feature = 3,
}

/// Dense 4-axis array; the signal carrier inside the network.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        Tensor { dims, data: vec![T::zero(); dims.numel()] }
    }

    pub fn full(dims: Dims, v: T) -> Self {
        Tensor { dims, data: vec![v; dims.numel()] }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.numel() {
            return Err(Error::dim(format!(
                "buffer of {} values cannot hold {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn scalar(v: T) -> Self {
        Tensor { dims: Dims::new(1, 1, 1, 1), data: vec![v] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, b: usize, c: usize, t: usize, f: usize) -> T {
        self.data[self.offset(b, c, t, f)]
    }

    pub fn set(&mut self, b: usize, c: usize, t: usize, f: usize, v: T) {
        let i = self.offset(b, c, t, f);
        self.data[i] = v;
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, t: usize, f: usize) -> usize {
        let d = self.dims;
        ((b * d.channels + c) * d.frames + t) * d.features + f
    }

    pub fn reshape(mut self, dims: Dims) -> Result<Self> {
        if dims.numel() != self.dims.numel() {
            return Err(Error::dim(format!("cannot reshape {:?} to {:?}", self.dims, dims)));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Contiguous `[outer, len, inner]` block copy along `axis`.
    pub fn slice(&self, axis: Axis, start: usize, len: usize) -> Result<Self> {
        let (outer, n, inner) = self.dims.split_at(axis);
        if start + len > n {
            return Err(Error::dim(format!(
                "slice {start}..{} out of range for axis {axis:?} of {:?}",
                start + len,
                self.dims
            )));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Ok(Tensor { dims: self.dims.with(axis, len), data })
    }

    pub fn concat(parts: &[&Tensor<T>], axis: Axis) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let mut total = 0;
        for p in parts {
            let mut a = p.dims.to_array();
            let mut b = first.dims.to_array();
            total += a[axis as usize];
            a[axis as usize] = 0;
            b[axis as usize] = 0;
            if a != b {
                return Err(Error::dim(format!(
                    "concat along {axis:?}: {:?} incompatible with {:?}",
                    p.dims, first.dims
                )));
            }
        }
        let dims = first.dims.with(axis, total);
        let (outer, _, inner) = dims.split_at(axis);
        let mut data = Vec::with_capacity(dims.numel());
        for o in 0..outer {
            for p in parts {
                let n = p.dims.get(axis) * inner;
                data.extend_from_slice(&p.data[o * n..(o + 1) * n]);
            }
        }
        Ok(Tensor { dims, data })
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_then_concat_restores_tensor() {
        let dims = Dims::new(2, 3, 4, 5);
        let t = Tensor::<f64>::from_vec(dims, (0..dims.numel()).map(|i| i as f64).collect()).unwrap();
        for axis in [Axis::Batch, Axis::Channel, Axis::Frame, Axis::Feature] {
            let n = dims.get(axis);
            let a = t.slice(axis, 0, 1).unwrap();
            let b = t.slice(axis, 1, n - 1).unwrap();
            assert_eq!(Tensor::concat(&[&a, &b], axis).unwrap(), t);
        }
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec(Dims::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }
}
