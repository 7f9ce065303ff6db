//! Bidirectional transformer encoder with post-layer-norm residual blocks.
//!
//! Block layout per layer (the original-transformer arrangement):
//!
//! ```text
//! x   -> self-attention -> dropout -> (+x)  -> layer norm -> x1
//! x1  -> feed-forward   -> dropout -> (+x1) -> layer norm -> x2
//! ```
//!
//! Sinusoidal absolute position encodings are added to the input before the
//! first layer; set `positional = None` to study order sensitivity. The mask
//! mode is a forward-pass argument so one set of weights can be probed in
//! both bidirectional and causal configurations.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionCache, MaskMode, SelfAttention};
use crate::dropout::{Dropout, DropoutMask};
use crate::error::{Error, Result};
use crate::linear::Linear;
use crate::norm::{LayerNorm, LayerNormCache};
use crate::params::ParameterStore;
use crate::pass::Pass;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalEncoding {
    Sinusoidal,
    None,
}

impl std::str::FromStr for PositionalEncoding {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sinusoidal" => Ok(PositionalEncoding::Sinusoidal),
            "none" => Ok(PositionalEncoding::None),
            other => Err(format!("unknown positional encoding '{other}' (expected sinusoidal|none)")),
        }
    }
}

impl std::fmt::Display for PositionalEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PositionalEncoding::Sinusoidal => "sinusoidal",
            PositionalEncoding::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Model width.
    pub d: usize,
    /// Number of encoder layers.
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward hidden width (conventionally `4 * d`).
    pub d_ffn: usize,
    pub dropout: f64,
    pub mask: MaskMode,
    pub positional: PositionalEncoding,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 || self.d_ffn == 0 {
            return Err(Error::shape(
                "encoder.config",
                format!("d={}, layers={}, d_ffn={} must all be positive", self.d, self.layers, self.d_ffn),
            ));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::shape(
                "encoder.config",
                format!("width {} not divisible by {} heads", self.d, self.heads),
            ));
        }
        Ok(())
    }
}

/// Position-wise feed-forward: `linear -> relu -> linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    lin1: Linear,
    lin2: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<T> {
    x: Tensor<T>,
    /// Pre-activation of the hidden layer; the ReLU mask is recovered from it.
    z1: Tensor<T>,
}

impl FeedForward {
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        d: usize,
        d_ffn: usize,
        rng: &mut rand_chacha::ChaCha20Rng,
    ) -> Result<Self> {
        Ok(FeedForward {
            lin1: Linear::init(store, &format!("{name}/lin1"), d, d_ffn, rng)?,
            lin2: Linear::init(store, &format!("{name}/lin2"), d_ffn, d, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        x: &Tensor<T>,
        pass: &Pass,
    ) -> Result<(Tensor<T>, FeedForwardCache<T>)> {
        let z1 = self.lin1.forward(store, x)?;
        let mut h = z1.clone();
        for v in h.data_mut() {
            pass.note_kink(v.to_f64().abs());
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let y = self.lin2.forward(store, &h)?;
        Ok((y, FeedForwardCache { x: x.clone(), z1 }))
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParameterStore<T>,
        cache: &FeedForwardCache<T>,
        dy: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut h = cache.z1.clone();
        for v in h.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let mut dh = self.lin2.backward(store, &h, dy)?;
        for (g, &z) in dh.data_mut().iter_mut().zip(cache.z1.data()) {
            if z <= T::zero() {
                *g = T::zero();
            }
        }
        self.lin1.backward(store, &cache.x, &dh)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: SelfAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
    drop_attn: Dropout,
    drop_ffn: Dropout,
}

#[derive(Debug)]
pub struct LayerCache<T> {
    attn: AttentionCache<T>,
    mask_attn: Option<DropoutMask>,
    ln1: LayerNormCache<T>,
    ffn: FeedForwardCache<T>,
    mask_ffn: Option<DropoutMask>,
    ln2: LayerNormCache<T>,
}

#[derive(Debug)]
pub struct EncoderCache<T> {
    mask_input: Option<DropoutMask>,
    layers: Vec<LayerCache<T>>,
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub config: EncoderConfig,
    layers: Vec<EncoderLayer>,
    input_dropout: Dropout,
}

impl TransformerEncoder {
    /// Register all weights under `name/..`. `site_base` offsets the dropout
    /// site ids so several stacks can coexist without mask collisions.
    pub fn init<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        config: EncoderConfig,
        site_base: u64,
        rng: &mut rand_chacha::ChaCha20Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("{name}/layer{l}");
            layers.push(EncoderLayer {
                attn: SelfAttention::init(store, &format!("{p}/attn"), config.d, config.heads, rng)?,
                ln1: LayerNorm::init(store, &format!("{p}/ln1"), config.d, rng)?,
                ffn: FeedForward::init(store, &format!("{p}/ffn"), config.d, config.d_ffn, rng)?,
                ln2: LayerNorm::init(store, &format!("{p}/ln2"), config.d, rng)?,
                drop_attn: Dropout::new(config.dropout, site_base + 1 + 2 * l as u64),
                drop_ffn: Dropout::new(config.dropout, site_base + 2 + 2 * l as u64),
            });
        }
        Ok(TransformerEncoder {
            config,
            layers,
            input_dropout: Dropout::new(config.dropout, site_base),
        })
    }

    /// Encode `[batch, len, d]` into contextualized `[batch, len, d]`.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        x: &Tensor<T>,
        mask: MaskMode,
        pass: &Pass,
    ) -> Result<(Tensor<T>, EncoderCache<T>)> {
        if x.rank() != 3 || x.dims()[2] != self.config.d {
            return Err(Error::shape(
                "encoder.forward",
                format!("expected [batch, len, {}], got {:?}", self.config.d, x.dims()),
            ));
        }
        let mut cur = x.clone();
        if self.config.positional == PositionalEncoding::Sinusoidal {
            add_sinusoidal(&mut cur);
        }
        let mask_input = self.input_dropout.forward(&mut cur, pass);
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (mut a, attn_cache) = layer.attn.forward(store, &cur, mask)?;
            let mask_attn = layer.drop_attn.forward(&mut a, pass);
            a.add_assign(&cur)?;
            let (x1, ln1_cache) = layer.ln1.forward(store, &a)?;
            let (mut f, ffn_cache) = layer.ffn.forward(store, &x1, pass)?;
            let mask_ffn = layer.drop_ffn.forward(&mut f, pass);
            f.add_assign(&x1)?;
            let (x2, ln2_cache) = layer.ln2.forward(store, &f)?;
            layer_caches.push(LayerCache {
                attn: attn_cache,
                mask_attn,
                ln1: ln1_cache,
                ffn: ffn_cache,
                mask_ffn,
                ln2: ln2_cache,
            });
            cur = x2;
        }
        cur.debug_assert_finite("encoder.forward");
        Ok((cur, EncoderCache { mask_input, layers: layer_caches }))
    }

    /// Backpropagate through the stack; accumulates weight gradients and
    /// returns the gradient with respect to the input embeddings.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParameterStore<T>,
        cache: &EncoderCache<T>,
        dy: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        for (layer, lc) in self.layers.iter().zip(cache.layers.iter()).rev() {
            // x2 = ln2(x1 + dropout(ffn(x1)))
            let ds2 = layer.ln2.backward(store, &lc.ln2, &d)?;
            let mut df = ds2.clone();
            Dropout::backward(&lc.mask_ffn, &mut df);
            let mut dx1 = layer.ffn.backward(store, &lc.ffn, &df)?;
            dx1.add_assign(&ds2)?;
            // x1 = ln1(x + dropout(attn(x)))
            let ds1 = layer.ln1.backward(store, &lc.ln1, &dx1)?;
            let mut da = ds1.clone();
            Dropout::backward(&lc.mask_attn, &mut da);
            let mut dx = layer.attn.backward(store, &lc.attn, &da)?;
            dx.add_assign(&ds1)?;
            d = dx;
        }
        Dropout::backward(&cache.mask_input, &mut d);
        Ok(d)
    }
}

/// Add the fixed sinusoidal position table in place:
/// `pe[pos, 2i] = sin(pos / 10000^(2i/d))`, `pe[pos, 2i+1] = cos(...)`.
pub fn add_sinusoidal<T: Scalar>(x: &mut Tensor<T>) {
    let (batch, len, d) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    for pos in 0..len {
        for i in 0..d {
            let exponent = 2.0 * ((i / 2) as f64) / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            let val = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            let val = T::from_f64(val);
            for b in 0..batch {
                let idx = x.at3(b, pos, i);
                x.data_mut()[idx] += val;
            }
        }
    }
}
