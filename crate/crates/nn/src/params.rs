//! Named parameter arrays with matching gradient and optimizer-state buffers.
//!
//! Layers hold [`ParamId`]s into one [`ParameterStore`] so the trainable state
//! of a whole model lives in a single place: the optimizer sweeps it, the
//! checkpoint writer serializes it in registration order, and the
//! finite-difference harness perturbs it element by element.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to one parameter array. Cheap to copy; only valid for the store
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Initialization schemes. Weight matrices default to uniform in
/// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`; biases to zero. Embedding tables use
/// an explicit range chosen by the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in `+-1/sqrt(fan_in)` with `fan_in = dims[0]`.
    UniformFanIn,
    /// Uniform in `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
struct Entry<T> {
    name: String,
    dims: Vec<usize>,
    value: Vec<T>,
    grad: Vec<T>,
    /// Adam first-moment estimate.
    m: Vec<T>,
    /// Adam second-moment estimate.
    v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ParameterStore<T> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, usize>,
    /// Adam step count (number of optimizer updates applied so far).
    pub(crate) adam_t: u64,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore { entries: Vec::new(), by_name: HashMap::new(), adam_t: 0 }
    }

    /// Register a parameter. Names must be unique; registration order is the
    /// canonical order for optimizer sweeps and checkpoints.
    pub fn register(
        &mut self,
        name: &str,
        dims: &[usize],
        init: Init,
        rng: &mut ChaCha20Rng,
    ) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Param(format!("duplicate parameter name '{name}'")));
        }
        let n: usize = dims.iter().product();
        assert!(n > 0, "parameter '{name}' must not be empty");
        let value = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Const(c) => vec![T::from_f64(c); n],
            Init::UniformFanIn => {
                let bound = 1.0 / (dims[0] as f64).sqrt();
                draw_uniform(rng, n, -bound, bound)
            }
            Init::Uniform { lo, hi } => draw_uniform(rng, n, lo, hi),
        };
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            dims: dims.to_vec(),
            value,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        });
        self.by_name.insert(name.to_string(), id.0);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn dims(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].dims
    }

    pub fn len_of(&self, id: ParamId) -> usize {
        self.entries[id.0].value.len()
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].grad
    }

    /// Accumulate a gradient contribution (`grad += contrib`).
    pub fn add_grad(&mut self, id: ParamId, contrib: &[T]) {
        let g = &mut self.entries[id.0].grad;
        assert_eq!(
            g.len(),
            contrib.len(),
            "gradient length mismatch for parameter '{}'",
            self.entries[id.0].name
        );
        for (a, b) in g.iter_mut().zip(contrib) {
            *a += *b;
        }
    }

    /// Add `delta` onto a single element of a gradient buffer (sparse updates
    /// from embedding lookups).
    #[inline]
    pub fn add_grad_at(&mut self, id: ParamId, idx: usize, delta: T) {
        self.entries[id.0].grad[idx] += delta;
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// All parameter ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Nudge one element in place (finite-difference probes).
    pub fn perturb(&mut self, id: ParamId, idx: usize, delta: f64) {
        let v = &mut self.entries[id.0].value[idx];
        *v = *v + T::from_f64(delta);
    }

    pub fn value_at(&self, id: ParamId, idx: usize) -> T {
        self.entries[id.0].value[idx]
    }

    pub fn set_value_at(&mut self, id: ParamId, idx: usize, v: T) {
        self.entries[id.0].value[idx] = v;
    }

    pub fn adam_state(&self, id: ParamId) -> (&[T], &[T]) {
        let e = &self.entries[id.0];
        (&e.m, &e.v)
    }

    #[allow(clippy::type_complexity)]
    pub(crate) fn optimizer_slices(
        &mut self,
        id: ParamId,
    ) -> (&mut [T], &mut [T], &mut [T], &mut [T], &str) {
        let e = &mut self.entries[id.0];
        (&mut e.value, &mut e.grad, &mut e.m, &mut e.v, &e.name)
    }

    pub fn adam_step_count(&self) -> u64 {
        self.adam_t
    }

    /// Overwrite optimizer state when resuming from a checkpoint.
    pub fn set_adam_state(&mut self, id: ParamId, m: &[T], v: &[T]) {
        let e = &mut self.entries[id.0];
        assert_eq!(m.len(), e.m.len());
        assert_eq!(v.len(), e.v.len());
        e.m.copy_from_slice(m);
        e.v.copy_from_slice(v);
    }

    pub fn set_adam_step_count(&mut self, t: u64) {
        self.adam_t = t;
    }
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn draw_uniform<T: Scalar>(rng: &mut ChaCha20Rng, n: usize, lo: f64, hi: f64) -> Vec<T> {
    (0..n).map(|_| T::from_f64(lo + rng.gen::<f64>() * (hi - lo))).collect()
}
