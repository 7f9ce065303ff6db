//! Per-call context threaded through forward passes.
//!
//! A [`Pass`] says whether dropout is live (training) and carries the
//! counter-based key that makes every dropout mask a pure function of
//! `(seed, step, unit, site)`. It can also carry a [`KinkMeter`], which lets
//! the gradient-check harness measure how close a forward pass came to a
//! non-differentiable point (ReLU corner, absolute value at zero, tied min).

use std::cell::Cell;

/// Key for counter-based dropout randomness. `unit` distinguishes repeated
/// invocations of the same weights within one optimization step (the path
/// encoder runs once per path of a plan).
#[derive(Debug, Clone, Copy)]
pub struct DropoutCtx {
    pub seed: u64,
    pub step: u64,
    pub unit: u64,
}

/// Records the smallest distance to a kink seen during a forward pass.
///
/// Finite differences are only a valid oracle where the function is smooth;
/// the check harness redraws any sample whose margin is too small.
#[derive(Debug)]
pub struct KinkMeter {
    min: Cell<f64>,
}

impl KinkMeter {
    pub fn new() -> Self {
        KinkMeter { min: Cell::new(f64::INFINITY) }
    }

    #[inline]
    pub fn note(&self, margin: f64) {
        if margin < self.min.get() {
            self.min.set(margin);
        }
    }

    pub fn min(&self) -> f64 {
        self.min.get()
    }
}

impl Default for KinkMeter {
    fn default() -> Self {
        Self::new()
    }
}

/// Forward-pass context.
#[derive(Debug, Clone, Copy)]
pub struct Pass<'a> {
    pub training: bool,
    pub dropout: Option<DropoutCtx>,
    pub kink: Option<&'a KinkMeter>,
}

impl<'a> Pass<'a> {
    /// Inference: dropout off, no kink tracking.
    pub fn inference() -> Self {
        Pass { training: false, dropout: None, kink: None }
    }

    /// Training at a given optimization step; `unit` separates repeated
    /// encoder invocations inside the step.
    pub fn train(seed: u64, step: u64, unit: u64) -> Self {
        Pass { training: true, dropout: Some(DropoutCtx { seed, step, unit }), kink: None }
    }

    pub fn with_kink(mut self, meter: &'a KinkMeter) -> Self {
        self.kink = Some(meter);
        self
    }

    #[inline]
    pub fn note_kink(&self, margin: f64) {
        if let Some(k) = self.kink {
            k.note(margin);
        }
    }
}
