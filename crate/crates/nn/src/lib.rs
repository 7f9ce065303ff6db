//! Dense tensor kernels and layers for sequence encoders, with hand-written
//! backward passes.
//!
//! Everything trainable lives in a [`params::ParameterStore`]; layers keep
//! only ids into it. The same generic code runs in `f32` for training and in
//! `f64` for the finite-difference gradient validation in [`gradcheck`].
//! Randomness (initialization, dropout) is fully deterministic given a seed:
//! dropout masks are counter-based, keyed by `(seed, step, unit, site)`.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod dropout;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod linear;
pub mod mlp;
pub mod norm;
pub mod params;
pub mod pass;
pub mod pool;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use attention::MaskMode;
pub use encoder::{EncoderConfig, PositionalEncoding, TransformerEncoder};
pub use error::{Error, Result};
pub use linear::Linear;
pub use mlp::Mlp;
pub use norm::LayerNorm;
pub use params::{Init, ParamId, ParameterStore};
pub use pass::{DropoutCtx, KinkMeter, Pass};
pub use pool::{mean_pool, mean_pool_backward};
pub use scalar::Scalar;
pub use tensor::Tensor;
