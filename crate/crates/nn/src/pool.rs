//! Mean pooling over the sequence axis.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `[batch, len, d] -> [batch, d]`, averaging across all positions.
pub fn mean_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::shape("mean_pool", format!("expected rank 3, got {:?}", x.dims())));
    }
    let (batch, len, d) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let inv = T::from_f64(1.0 / len as f64);
    let mut y = Tensor::zeros(&[batch, d]);
    for b in 0..batch {
        let yr = y.row_mut(b);
        for l in 0..len {
            for (o, &v) in yr.iter_mut().zip(x.row3(b, l)) {
                *o += v;
            }
        }
        for o in yr.iter_mut() {
            *o *= inv;
        }
    }
    Ok(y)
}

/// Gradient of [`mean_pool`]: spread `dy / len` across every position.
pub fn mean_pool_backward<T: Scalar>(dy: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    if dy.rank() != 2 {
        return Err(Error::shape("mean_pool.backward", format!("expected rank 2, got {:?}", dy.dims())));
    }
    let (batch, d) = (dy.dims()[0], dy.dims()[1]);
    let inv = T::from_f64(1.0 / len as f64);
    let mut dx = Tensor::zeros(&[batch, len, d]);
    for b in 0..batch {
        for l in 0..len {
            for (o, &g) in dx.row3_mut(b, l).iter_mut().zip(dy.row(b)) {
                *o = g * inv;
            }
        }
    }
    Ok(dx)
}
