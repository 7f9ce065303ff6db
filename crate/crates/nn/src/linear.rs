//! Affine map `y = x W + b` applied to the trailing axis.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weights are stored `[in_dim, out_dim]` row-major; the layer applies to any
/// tensor whose trailing axis equals `in_dim`, treating leading axes as rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    name: String,
}

impl Linear {
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        let w = store.register(&format!("{name}/w"), &[in_dim, out_dim], Init::UniformFanIn, rng)?;
        let b = store.register(&format!("{name}/b"), &[out_dim], Init::Zeros, rng)?;
        Ok(Linear { w, b, in_dim, out_dim, name: name.to_string() })
    }

    pub fn forward<T: Scalar>(&self, store: &ParameterStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let last = *x.dims().last().unwrap();
        if last != self.in_dim {
            return Err(Error::shape(
                format!("linear[{}].forward", self.name),
                format!("input trailing axis {last}, weights expect {}", self.in_dim),
            ));
        }
        let w = store.value(self.w);
        let b = store.value(self.b);
        let rows = x.n_rows();
        let mut out_dims = x.dims().to_vec();
        *out_dims.last_mut().unwrap() = self.out_dim;
        let mut y = vec![T::zero(); rows * self.out_dim];
        for r in 0..rows {
            let xr = x.row(r);
            let yr = &mut y[r * self.out_dim..(r + 1) * self.out_dim];
            yr.copy_from_slice(b);
            for (i, &xi) in xr.iter().enumerate() {
                let wrow = &w[i * self.out_dim..(i + 1) * self.out_dim];
                for (o, &wio) in wrow.iter().enumerate() {
                    yr[o] += xi * wio;
                }
            }
        }
        let y = Tensor::from_vec(&out_dims, y)?;
        y.debug_assert_finite("linear.forward");
        Ok(y)
    }

    /// Accumulates weight/bias gradients into the store and returns `dx`.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParameterStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if *dy.dims().last().unwrap() != self.out_dim || dy.n_rows() != x.n_rows() {
            return Err(Error::shape(
                format!("linear[{}].backward", self.name),
                format!("dy {:?} does not match x {:?} / out_dim {}", dy.dims(), x.dims(), self.out_dim),
            ));
        }
        let rows = x.n_rows();
        let mut dw = vec![T::zero(); self.in_dim * self.out_dim];
        let mut db = vec![T::zero(); self.out_dim];
        let mut dx = Tensor::zeros(x.dims());
        {
            let w = store.value(self.w);
            for r in 0..rows {
                let xr = x.row(r);
                let dyr = dy.row(r);
                for (o, &g) in dyr.iter().enumerate() {
                    db[o] += g;
                }
                let dxr = dx.row_mut(r);
                for i in 0..self.in_dim {
                    let wrow = &w[i * self.out_dim..(i + 1) * self.out_dim];
                    let dwrow = &mut dw[i * self.out_dim..(i + 1) * self.out_dim];
                    let xi = xr[i];
                    let mut acc = T::zero();
                    for (o, (&g, &wio)) in dyr.iter().zip(wrow.iter()).enumerate() {
                        dwrow[o] += xi * g;
                        acc += g * wio;
                    }
                    dxr[i] = acc;
                }
            }
        }
        store.add_grad(self.w, &dw);
        store.add_grad(self.b, &db);
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn forward_matches_manual_product() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut store = ParameterStore::<f64>::new();
        let lin = Linear::init(&mut store, "t", 2, 3, &mut rng).unwrap();
        store.value_mut(lin.w).copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        store.value_mut(lin.b).copy_from_slice(&[0.5, -0.5, 0.0]);
        let x = Tensor::from_vec(&[1, 2], vec![2.0, -1.0]).unwrap();
        let y = lin.forward(&store, &x).unwrap();
        // y = [2*1 - 4 + 0.5, 2*2 - 5 - 0.5, 2*3 - 6] = [-1.5, -1.5, 0.0]
        assert_eq!(y.data(), &[-1.5, -1.5, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_trailing_axis() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut store = ParameterStore::<f64>::new();
        let lin = Linear::init(&mut store, "t", 4, 3, &mut rng).unwrap();
        let x = Tensor::<f64>::zeros(&[2, 5]);
        let err = lin.forward(&store, &x).unwrap_err();
        assert!(err.to_string().contains("linear[t]"), "error names the layer: {err}");
    }
}
