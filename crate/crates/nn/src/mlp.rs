//! Fully connected multi-layer perceptron with ReLU between layers.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::linear::Linear;
use crate::params::ParameterStore;
use crate::pass::Pass;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `widths = [in, hidden.., out]`; ReLU follows every layer except the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
    widths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    /// Input to each layer (index 0 is the MLP input).
    inputs: Vec<Tensor<T>>,
    /// Pre-activation outputs of every layer except the last.
    preacts: Vec<Tensor<T>>,
}

impl Mlp {
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        widths: &[usize],
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::shape(
                format!("mlp[{name}].init"),
                format!("need at least [in, out] widths, got {widths:?}"),
            ));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            layers.push(Linear::init(store, &format!("{name}/fc{l}"), pair[0], pair[1], rng)?);
        }
        Ok(Mlp { layers, widths: widths.to_vec() })
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        x: &Tensor<T>,
        pass: &Pass,
    ) -> Result<(Tensor<T>, MlpCache<T>)> {
        let mut inputs = vec![x.clone()];
        let mut preacts = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = x.clone();
        for (l, lin) in self.layers.iter().enumerate() {
            let z = lin.forward(store, &cur)?;
            if l + 1 < self.layers.len() {
                preacts.push(z.clone());
                let mut h = z;
                for v in h.data_mut() {
                    pass.note_kink(v.to_f64().abs());
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
                inputs.push(h.clone());
                cur = h;
            } else {
                cur = z;
            }
        }
        cur.debug_assert_finite("mlp.forward");
        Ok((cur, MlpCache { inputs, preacts }))
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParameterStore<T>,
        cache: &MlpCache<T>,
        dy: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        for (l, lin) in self.layers.iter().enumerate().rev() {
            d = lin.backward(store, &cache.inputs[l], &d)?;
            if l > 0 {
                for (g, &z) in d.data_mut().iter_mut().zip(cache.preacts[l - 1].data()) {
                    if z <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
        }
        Ok(d)
    }
}
