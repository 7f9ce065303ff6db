//! Layer normalization over the trailing (feature) axis.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    dim: usize,
    name: String,
}

/// Per-row normalized activations and inverse standard deviations, kept for
/// the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    dims: Vec<usize>,
}

impl LayerNorm {
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        dim: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        let gamma = store.register(&format!("{name}/gamma"), &[dim], Init::Const(1.0), rng)?;
        let beta = store.register(&format!("{name}/beta"), &[dim], Init::Zeros, rng)?;
        Ok(LayerNorm { gamma, beta, dim, name: name.to_string() })
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, LayerNormCache<T>)> {
        let n = *x.dims().last().unwrap();
        if n != self.dim {
            return Err(Error::shape(
                format!("layer_norm[{}].forward", self.name),
                format!("trailing axis {n}, expected {}", self.dim),
            ));
        }
        let gamma = store.value(self.gamma);
        let beta = store.value(self.beta);
        let rows = x.n_rows();
        let inv_n = T::from_f64(1.0 / n as f64);
        let mut y = Tensor::zeros(x.dims());
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let xr = x.row(r);
            let mean = xr.iter().copied().sum::<T>() * inv_n;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let istd = T::one() / (var + T::from_f64(EPS)).sqrt();
            inv_std[r] = istd;
            let xh = &mut xhat[r * n..(r + 1) * n];
            let yr = y.row_mut(r);
            for i in 0..n {
                xh[i] = (xr[i] - mean) * istd;
                yr[i] = gamma[i] * xh[i] + beta[i];
            }
        }
        y.debug_assert_finite("layer_norm.forward");
        Ok((y, LayerNormCache { xhat, inv_std, dims: x.dims().to_vec() }))
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParameterStore<T>,
        cache: &LayerNormCache<T>,
        dy: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if dy.dims() != cache.dims.as_slice() {
            return Err(Error::shape(
                format!("layer_norm[{}].backward", self.name),
                format!("dy {:?} vs cached {:?}", dy.dims(), cache.dims),
            ));
        }
        let n = self.dim;
        let rows = dy.n_rows();
        let inv_n = T::from_f64(1.0 / n as f64);
        let mut dgamma = vec![T::zero(); n];
        let mut dbeta = vec![T::zero(); n];
        let mut dx = Tensor::zeros(&cache.dims);
        {
            let gamma = store.value(self.gamma);
            for r in 0..rows {
                let dyr = dy.row(r);
                let xh = &cache.xhat[r * n..(r + 1) * n];
                let istd = cache.inv_std[r];
                let mut sum_dxh = T::zero();
                let mut sum_dxh_xh = T::zero();
                for i in 0..n {
                    let dxh = dyr[i] * gamma[i];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[i];
                    dgamma[i] += dyr[i] * xh[i];
                    dbeta[i] += dyr[i];
                }
                let dxr = dx.row_mut(r);
                for i in 0..n {
                    let dxh = dyr[i] * gamma[i];
                    dxr[i] = istd * inv_n * (T::from_f64(n as f64) * dxh - sum_dxh - xh[i] * sum_dxh_xh);
                }
            }
        }
        store.add_grad(self.gamma, &dgamma);
        store.add_grad(self.beta, &dbeta);
        Ok(dx)
    }
}
