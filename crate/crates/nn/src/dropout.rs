//! Inverted dropout with counter-based masks.
//!
//! The mask for a given site is a pure function of `(seed, step, unit, site)`
//! — no mutable RNG state survives between calls — so replaying an
//! optimization step regenerates exactly the masks it used, which keeps
//! training bit-reproducible and lets finite differences run with dropout
//! active (the mask is constant under parameter perturbation).

use rand::Rng;

use crate::pass::Pass;
use crate::rng::{derive, mix2};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
    /// Stable identifier of this dropout location in the network.
    pub site: u64,
}

/// Keep/drop decisions from a forward pass, needed to route gradients.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    keep: Vec<bool>,
    scale: f64,
}

impl Dropout {
    pub fn new(rate: f64, site: u64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1), got {rate}");
        Dropout { rate, site }
    }

    /// Apply dropout in place. Returns `None` (identity) at inference or when
    /// the rate is zero.
    pub fn forward<T: Scalar>(&self, x: &mut Tensor<T>, pass: &Pass) -> Option<DropoutMask> {
        if !pass.training || self.rate == 0.0 {
            return None;
        }
        let ctx = pass
            .dropout
            .expect("training pass must carry a dropout context");
        let mut rng = derive(ctx.seed, mix2(mix2(ctx.step, ctx.unit), self.site));
        let scale = 1.0 / (1.0 - self.rate);
        let scale_t = T::from_f64(scale);
        let keep: Vec<bool> = (0..x.len()).map(|_| rng.gen::<f64>() >= self.rate).collect();
        for (v, &k) in x.data_mut().iter_mut().zip(&keep) {
            *v = if k { *v * scale_t } else { T::zero() };
        }
        Some(DropoutMask { keep, scale })
    }

    /// Route gradients through the mask recorded by `forward`.
    pub fn backward<T: Scalar>(mask: &Option<DropoutMask>, dy: &mut Tensor<T>) {
        if let Some(m) = mask {
            let scale_t = T::from_f64(m.scale);
            for (g, &k) in dy.data_mut().iter_mut().zip(&m.keep) {
                *g = if k { *g * scale_t } else { T::zero() };
            }
        }
    }
}
