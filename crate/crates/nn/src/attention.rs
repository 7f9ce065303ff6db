//! Multi-head scaled dot-product self-attention.
//!
//! Two mask modes: `Bidirectional` (every position attends everywhere, the
//! default for path encoding) and `Causal` (position `i` attends to `j <= i`).
//! Masked pairs are skipped outright rather than added as `-inf` logits, so in
//! causal mode the output at position `i` is bit-for-bit independent of later
//! positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::Linear;
use crate::params::ParameterStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Bidirectional,
    Causal,
}

impl std::str::FromStr for MaskMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bidirectional" => Ok(MaskMode::Bidirectional),
            "causal" => Ok(MaskMode::Causal),
            other => Err(format!("unknown mask mode '{other}' (expected bidirectional|causal)")),
        }
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::Bidirectional => "bidirectional",
            MaskMode::Causal => "causal",
        })
    }
}

#[inline]
fn attend_limit(mask: MaskMode, i: usize, len: usize) -> usize {
    match mask {
        MaskMode::Bidirectional => len,
        MaskMode::Causal => i + 1,
    }
}

#[derive(Debug, Clone)]
pub struct SelfAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    d: usize,
    heads: usize,
    name: String,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    x: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// Softmax weights, `[(b*heads + h)*len + i]*len + j`; zero where masked.
    attn: Vec<T>,
    ctx: Tensor<T>,
    mask: MaskMode,
}

impl SelfAttention {
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut rand_chacha::ChaCha20Rng,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(
                format!("attention[{name}].init"),
                format!("model width {d} is not divisible by {heads} heads"),
            ));
        }
        Ok(SelfAttention {
            wq: Linear::init(store, &format!("{name}/wq"), d, d, rng)?,
            wk: Linear::init(store, &format!("{name}/wk"), d, d, rng)?,
            wv: Linear::init(store, &format!("{name}/wv"), d, d, rng)?,
            wo: Linear::init(store, &format!("{name}/wo"), d, d, rng)?,
            d,
            heads,
            name: name.to_string(),
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        x: &Tensor<T>,
        mask: MaskMode,
    ) -> Result<(Tensor<T>, AttentionCache<T>)> {
        if x.rank() != 3 || x.dims()[2] != self.d {
            return Err(Error::shape(
                format!("attention[{}].forward", self.name),
                format!("expected [batch, len, {}], got {:?}", self.d, x.dims()),
            ));
        }
        let (batch, len) = (x.dims()[0], x.dims()[1]);
        let dh = self.d / self.heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let q = self.wq.forward(store, x)?;
        let k = self.wk.forward(store, x)?;
        let v = self.wv.forward(store, x)?;

        let mut attn = vec![T::zero(); batch * self.heads * len * len];
        let mut ctx = Tensor::zeros(x.dims());
        let mut logits = vec![T::zero(); len];
        for b in 0..batch {
            for h in 0..self.heads {
                let hs = h * dh;
                for i in 0..len {
                    let limit = attend_limit(mask, i, len);
                    let qi = &q.row3(b, i)[hs..hs + dh];
                    let mut max = T::neg_infinity();
                    for (j, lj) in logits.iter_mut().enumerate().take(limit) {
                        let kj = &k.row3(b, j)[hs..hs + dh];
                        let mut dot = T::zero();
                        for c in 0..dh {
                            dot += qi[c] * kj[c];
                        }
                        *lj = dot * scale;
                        if *lj > max {
                            max = *lj;
                        }
                    }
                    let mut denom = T::zero();
                    for lj in logits.iter_mut().take(limit) {
                        *lj = (*lj - max).exp();
                        denom += *lj;
                    }
                    let arow = &mut attn[((b * self.heads + h) * len + i) * len..][..len];
                    for (j, &lj) in logits.iter().enumerate().take(limit) {
                        arow[j] = lj / denom;
                    }
                    let crow = &mut ctx.row3_mut(b, i)[hs..hs + dh];
                    for j in 0..limit {
                        let a = arow[j];
                        let vj = &v.row3(b, j)[hs..hs + dh];
                        for c in 0..dh {
                            crow[c] += a * vj[c];
                        }
                    }
                }
            }
        }
        let y = self.wo.forward(store, &ctx)?;
        y.debug_assert_finite("attention.forward");
        Ok((y, AttentionCache { x: x.clone(), q, k, v, attn, ctx, mask }))
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParameterStore<T>,
        cache: &AttentionCache<T>,
        dy: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let (batch, len) = (cache.x.dims()[0], cache.x.dims()[1]);
        let dh = self.d / self.heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let dctx = self.wo.backward(store, &cache.ctx, dy)?;
        let mut dq = Tensor::zeros(cache.x.dims());
        let mut dk = Tensor::zeros(cache.x.dims());
        let mut dv = Tensor::zeros(cache.x.dims());
        let mut da = vec![T::zero(); len];
        for b in 0..batch {
            for h in 0..self.heads {
                let hs = h * dh;
                for i in 0..len {
                    let limit = attend_limit(cache.mask, i, len);
                    let arow = &cache.attn[((b * self.heads + h) * len + i) * len..][..len];
                    let dci = &dctx.row3(b, i)[hs..hs + dh];
                    // da[j] = dctx_i . v_j ; dv_j += a[j] * dctx_i
                    let mut inner = T::zero();
                    for j in 0..limit {
                        let vj = &cache.v.row3(b, j)[hs..hs + dh];
                        let mut dot = T::zero();
                        for c in 0..dh {
                            dot += dci[c] * vj[c];
                        }
                        da[j] = dot;
                        inner += dot * arow[j];
                        let dvj = &mut dv.row3_mut(b, j)[hs..hs + dh];
                        for c in 0..dh {
                            dvj[c] += arow[j] * dci[c];
                        }
                    }
                    // softmax jacobian: dlogit[j] = a[j] * (da[j] - sum_j' da[j'] a[j'])
                    let qi = cache.q.row3(b, i);
                    for j in 0..limit {
                        let dlogit = arow[j] * (da[j] - inner) * scale;
                        if dlogit == T::zero() {
                            continue;
                        }
                        let kj = &cache.k.row3(b, j)[hs..hs + dh];
                        let dqi = &mut dq.row3_mut(b, i)[hs..hs + dh];
                        for c in 0..dh {
                            dqi[c] += dlogit * kj[c];
                        }
                        let dkj = &mut dk.row3_mut(b, j)[hs..hs + dh];
                        for c in 0..dh {
                            dkj[c] += dlogit * qi[hs + c];
                        }
                    }
                }
            }
        }
        let mut dx = self.wq.backward(store, &cache.x, &dq)?;
        dx.add_assign(&self.wk.backward(store, &cache.x, &dk)?)?;
        dx.add_assign(&self.wv.backward(store, &cache.x, &dv)?)?;
        Ok(dx)
    }
}
