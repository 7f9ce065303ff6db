//! Dense row-major tensors of rank 1..=3.
//!
//! Shapes follow the `batch x sequence x feature` convention used throughout
//! the encoder stack. The type stays deliberately small: storage, shape
//! checks, and a handful of elementwise helpers. Layer kernels index the raw
//! slice directly so every arithmetic step stays visible next to its
//! hand-written backward pass.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// A tensor filled with zeros. Rank must be 1..=3 and no axis may be empty.
    pub fn zeros(dims: &[usize]) -> Self {
        check_dims(dims);
        Tensor { dims: dims.to_vec(), data: vec![T::zero(); dims.iter().product()] }
    }

    /// Wrap an existing buffer. Errors if the element count does not match.
    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        check_dims(dims);
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::shape(
                "tensor::from_vec",
                format!("dims {:?} expect {} elements, got {}", dims, expect, data.len()),
            ));
        }
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Flat offset of `[b, l, f]` in a rank-3 tensor.
    #[inline]
    pub fn at3(&self, b: usize, l: usize, f: usize) -> usize {
        debug_assert_eq!(self.rank(), 3);
        (b * self.dims[1] + l) * self.dims[2] + f
    }

    /// Flat offset of `[r, c]` in a rank-2 tensor.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 2);
        r * self.dims[1] + c
    }

    /// The rank-2 row `r` as a slice (also works per `[b, l]` pair via `row3`).
    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        let c = self.dims[self.rank() - 1];
        &self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.dims[self.rank() - 1];
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Feature row at `[b, l]` of a rank-3 tensor.
    #[inline]
    pub fn row3(&self, b: usize, l: usize) -> &[T] {
        debug_assert_eq!(self.rank(), 3);
        self.row(b * self.dims[1] + l)
    }

    #[inline]
    pub fn row3_mut(&mut self, b: usize, l: usize) -> &mut [T] {
        debug_assert_eq!(self.rank(), 3);
        self.row_mut(b * self.dims[1] + l)
    }

    /// Number of trailing-axis rows (product of all but the last axis).
    pub fn n_rows(&self) -> usize {
        self.len() / self.dims[self.rank() - 1]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Elementwise `self += other`. Shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(
                "tensor::add_assign",
                format!("{:?} vs {:?}", self.dims, other.dims),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x = *x * s);
    }

    /// Debug-mode guard: fail fast if an op produced NaN or infinity.
    #[inline]
    pub fn debug_assert_finite(&self, op: &str) {
        if cfg!(debug_assertions) {
            for &x in &self.data {
                assert!(x.is_finite(), "non-finite value after {op}");
            }
        }
    }
}

fn check_dims(dims: &[usize]) {
    assert!(
        (1..=3).contains(&dims.len()),
        "tensor rank must be 1..=3, got {:?}",
        dims
    );
    assert!(dims.iter().all(|&d| d > 0), "tensor axes must be non-empty, got {:?}", dims);
}
