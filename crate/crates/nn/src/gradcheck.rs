//! Central finite-difference validation of hand-written gradients.
//!
//! Every differentiable op is wrapped as an [`FdCase`]: a builder that draws a
//! fresh parameter store plus a runner computing a scalar projection of the
//! op's output (and, on request, analytic gradients for **all** parameters,
//! inputs included — inputs are registered as parameters so `dx` is validated
//! alongside the weights).
//!
//! Finite differences are only a trustworthy oracle away from kinks (ReLU
//! corners, `|x|` at zero, tied minima). Each draw therefore first probes the
//! forward pass with a [`KinkMeter`]; draws that land within [`KINK_GUARD`]
//! of a kink are discarded and redrawn, and the redraw count is reported.

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::pass::KinkMeter;
use crate::rng::mix2;

/// Central-difference step, applied at `f64` precision.
pub const FD_STEP: f64 = 1e-5;
/// Maximum allowed relative error between analytic and numeric gradients.
pub const FD_TOL: f64 = 1e-4;
/// Absolute resolution of the probe: disagreements below this are within
/// central-difference roundoff (`eps·|f|/h`) and carry no signal, however
/// large they are *relatively* — tiny gradients would otherwise fail on
/// noise alone.
pub const FD_ATOL: f64 = 1e-8;
/// Minimum distance from a kink for a draw to be usable.
pub const KINK_GUARD: f64 = 1e-3;

/// A forward/backward runner over a concrete random instance.
///
/// The runner is called as `run(store, with_grad, kink_meter)` and returns the
/// scalar output; when `with_grad` is true it must also accumulate analytic
/// gradients into the store.
pub struct FdInstance {
    pub store: ParameterStore<f64>,
    #[allow(clippy::type_complexity)]
    pub run: Box<dyn FnMut(&mut ParameterStore<f64>, bool, Option<&KinkMeter>) -> Result<f64>>,
}

/// A named op under test; `build(seed)` draws one random instance.
pub struct FdCase {
    pub name: String,
    #[allow(clippy::type_complexity)]
    pub build: Box<dyn FnMut(u64) -> Result<FdInstance>>,
}

impl FdCase {
    pub fn new(
        name: impl Into<String>,
        build: impl FnMut(u64) -> Result<FdInstance> + 'static,
    ) -> Self {
        FdCase { name: name.into(), build: Box::new(build) }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub draws: usize,
    pub redraws: usize,
    /// Total parameter elements compared across all draws.
    pub elements: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Run one case for `draws` usable random instances.
pub fn run_case(case: &mut FdCase, seed: u64, draws: usize) -> Result<CheckResult> {
    let mut result = CheckResult {
        name: case.name.clone(),
        draws: 0,
        redraws: 0,
        elements: 0,
        max_rel_err: 0.0,
        passed: true,
    };
    let mut attempt = 0u64;
    while result.draws < draws {
        if result.redraws > 10 * draws + 20 {
            return Err(Error::NonFinite {
                context: format!("gradient check '{}' cannot find a kink-free sample", case.name),
            });
        }
        let mut inst = (case.build)(mix2(seed, attempt))?;
        attempt += 1;

        // Probe the kink margin before trusting finite differences.
        let meter = KinkMeter::new();
        (inst.run)(&mut inst.store, false, Some(&meter))?;
        if meter.min() < KINK_GUARD {
            result.redraws += 1;
            continue;
        }

        inst.store.zero_grads();
        (inst.run)(&mut inst.store, true, None)?;
        let ids: Vec<_> = inst.store.ids().collect();
        let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| inst.store.grad(id).to_vec()).collect();

        for (slot, &id) in ids.iter().enumerate() {
            for i in 0..inst.store.len_of(id) {
                let x0 = inst.store.value_at(id, i);
                inst.store.set_value_at(id, i, x0 + FD_STEP);
                let fp = (inst.run)(&mut inst.store, false, None)?;
                inst.store.set_value_at(id, i, x0 - FD_STEP);
                let fm = (inst.run)(&mut inst.store, false, None)?;
                inst.store.set_value_at(id, i, x0);
                let fd = (fp - fm) / (2.0 * FD_STEP);
                let a = analytic[slot][i];
                result.elements += 1;
                let abs_err = (a - fd).abs();
                if abs_err <= FD_ATOL {
                    continue; // below the probe's resolution either way
                }
                let rel = abs_err / a.abs().max(fd.abs());
                if rel > result.max_rel_err {
                    result.max_rel_err = rel;
                }
                if rel > FD_TOL {
                    result.passed = false;
                }
            }
        }
        result.draws += 1;
    }
    Ok(result)
}

/// Run every case; error only on infrastructure failure (a failing
/// comparison is reported in its `CheckResult`).
pub fn run_cases(cases: &mut [FdCase], seed: u64, draws_per_case: usize) -> Result<Vec<CheckResult>> {
    cases
        .iter_mut()
        .map(|c| run_case(c, seed, draws_per_case))
        .collect()
}

/// Human-readable one-line-per-op report.
pub fn format_report(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:6} {:<28} max rel err {:.3e}  ({} draws, {} elements, {} redraws)\n",
            if r.passed { "ok" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.draws,
            r.elements,
            r.redraws,
        ));
    }
    out
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

// ---------------------------------------------------------------------------
// Cases for the ops defined in this crate.
// ---------------------------------------------------------------------------

use crate::attention::{MaskMode, SelfAttention};
use crate::encoder::{EncoderConfig, FeedForward, PositionalEncoding, TransformerEncoder};
use crate::linear::Linear;
use crate::mlp::Mlp;
use crate::norm::LayerNorm;
use crate::params::{Init, ParamId};
use crate::pass::Pass;
use crate::pool::{mean_pool, mean_pool_backward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Register an input tensor as a parameter so its gradient is checked too.
pub fn input_param(
    store: &mut ParameterStore<f64>,
    dims: &[usize],
    rng: &mut ChaCha20Rng,
) -> Result<ParamId> {
    store.register("input", dims, Init::Uniform { lo: -1.0, hi: 1.0 }, rng)
}

pub fn read_input(store: &ParameterStore<f64>, id: ParamId, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_vec(dims, store.value(id).to_vec()).expect("input dims are fixed at registration")
}

/// Fixed random projection weights turning a tensor output into a scalar.
pub fn scalarizer(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
}

pub fn project<T: Scalar>(y: &Tensor<T>, w: &[f64]) -> f64 {
    y.data().iter().zip(w).map(|(&v, &wi)| v.to_f64() * wi).sum()
}

pub fn projection_grad(dims: &[usize], w: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(dims, w.to_vec()).expect("scalarizer length matches output")
}

/// The finite-difference cases for every op in this crate.
pub fn nn_cases() -> Vec<FdCase> {
    let mut cases = Vec::new();

    cases.push(FdCase::new("linear", |seed| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let dims = [2usize, 3, 5];
        let input = input_param(&mut store, &dims, &mut rng)?;
        let lin = Linear::init(&mut store, "lin", 5, 4, &mut rng)?;
        let w = scalarizer(&mut rng, 2 * 3 * 4);
        Ok(FdInstance {
            store,
            run: Box::new(move |store, with_grad, _kink| {
                let x = read_input(store, input, &dims);
                let y = lin.forward(store, &x)?;
                if with_grad {
                    let dy = projection_grad(y.dims(), &w);
                    let dx = lin.backward(store, &x, &dy)?;
                    store.add_grad(input, dx.data());
                }
                Ok(project(&y, &w))
            }),
        })
    }));

    cases.push(FdCase::new("layer_norm", |seed| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let dims = [2usize, 3, 6];
        let input = input_param(&mut store, &dims, &mut rng)?;
        let ln = LayerNorm::init(&mut store, "ln", 6, &mut rng)?;
        let w = scalarizer(&mut rng, 2 * 3 * 6);
        Ok(FdInstance {
            store,
            run: Box::new(move |store, with_grad, _kink| {
                let x = read_input(store, input, &dims);
                let (y, cache) = ln.forward(store, &x)?;
                if with_grad {
                    let dy = projection_grad(y.dims(), &w);
                    let dx = ln.backward(store, &cache, &dy)?;
                    store.add_grad(input, dx.data());
                }
                Ok(project(&y, &w))
            }),
        })
    }));

    for mask in [MaskMode::Bidirectional, MaskMode::Causal] {
        cases.push(FdCase::new(format!("attention_{mask}"), move |seed| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut store = ParameterStore::new();
            let dims = [2usize, 4, 6];
            let input = input_param(&mut store, &dims, &mut rng)?;
            let attn = SelfAttention::init(&mut store, "attn", 6, 2, &mut rng)?;
            let w = scalarizer(&mut rng, 2 * 4 * 6);
            Ok(FdInstance {
                store,
                run: Box::new(move |store, with_grad, _kink| {
                    let x = read_input(store, input, &dims);
                    let (y, cache) = attn.forward(store, &x, mask)?;
                    if with_grad {
                        let dy = projection_grad(y.dims(), &w);
                        let dx = attn.backward(store, &cache, &dy)?;
                        store.add_grad(input, dx.data());
                    }
                    Ok(project(&y, &w))
                }),
            })
        }));
    }

    cases.push(FdCase::new("feed_forward", |seed| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let dims = [2usize, 3, 6];
        let input = input_param(&mut store, &dims, &mut rng)?;
        let ffn = FeedForward::init(&mut store, "ffn", 6, 10, &mut rng)?;
        let w = scalarizer(&mut rng, 2 * 3 * 6);
        Ok(FdInstance {
            store,
            run: Box::new(move |store, with_grad, kink| {
                let x = read_input(store, input, &dims);
                let mut pass = Pass::inference();
                if let Some(k) = kink {
                    pass = pass.with_kink(k);
                }
                let (y, cache) = ffn.forward(store, &x, &pass)?;
                if with_grad {
                    let dy = projection_grad(y.dims(), &w);
                    let dx = ffn.backward(store, &cache, &dy)?;
                    store.add_grad(input, dx.data());
                }
                Ok(project(&y, &w))
            }),
        })
    }));

    // Full encoder stack, with and without dropout. The dropout variant uses
    // a fixed counter-based key, so its masks are constant under perturbation
    // and the composite stays differentiable.
    for (label, layers, dropout) in [("encoder", 2usize, 0.0f64), ("encoder_dropout", 1, 0.3)] {
        cases.push(FdCase::new(label, move |seed| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut store = ParameterStore::new();
            let dims = [2usize, 4, 6];
            let input = input_param(&mut store, &dims, &mut rng)?;
            let config = EncoderConfig {
                d: 6,
                layers,
                heads: 2,
                d_ffn: 12,
                dropout,
                mask: MaskMode::Bidirectional,
                positional: PositionalEncoding::Sinusoidal,
            };
            let enc = TransformerEncoder::init(&mut store, "enc", config, 0, &mut rng)?;
            let w = scalarizer(&mut rng, 2 * 4 * 6);
            Ok(FdInstance {
                store,
                run: Box::new(move |store, with_grad, kink| {
                    let x = read_input(store, input, &dims);
                    let mut pass =
                        if dropout > 0.0 { Pass::train(7, 3, 1) } else { Pass::inference() };
                    if let Some(k) = kink {
                        pass = pass.with_kink(k);
                    }
                    let (y, cache) = enc.forward(store, &x, MaskMode::Bidirectional, &pass)?;
                    if with_grad {
                        let dy = projection_grad(y.dims(), &w);
                        let dx = enc.backward(store, &cache, &dy)?;
                        store.add_grad(input, dx.data());
                    }
                    Ok(project(&y, &w))
                }),
            })
        }));
    }

    cases.push(FdCase::new("mean_pool", |seed| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let dims = [3usize, 4, 5];
        let input = input_param(&mut store, &dims, &mut rng)?;
        let w = scalarizer(&mut rng, 3 * 5);
        Ok(FdInstance {
            store,
            run: Box::new(move |store, with_grad, _kink| {
                let x = read_input(store, input, &dims);
                let y = mean_pool(&x)?;
                if with_grad {
                    let dy = projection_grad(y.dims(), &w);
                    let dx = mean_pool_backward(&dy, dims[1])?;
                    store.add_grad(input, dx.data());
                }
                Ok(project(&y, &w))
            }),
        })
    }));

    cases.push(FdCase::new("mlp", |seed| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let dims = [3usize, 8];
        let input = input_param(&mut store, &dims, &mut rng)?;
        let mlp = Mlp::init(&mut store, "mlp", &[8, 6, 6, 4], &mut rng)?;
        let w = scalarizer(&mut rng, 3 * 4);
        Ok(FdInstance {
            store,
            run: Box::new(move |store, with_grad, kink| {
                let x = read_input(store, input, &dims);
                let mut pass = Pass::inference();
                if let Some(k) = kink {
                    pass = pass.with_kink(k);
                }
                let (y, cache) = mlp.forward(store, &x, &pass)?;
                if with_grad {
                    let dy = projection_grad(y.dims(), &w);
                    let dx = mlp.backward(store, &cache, &dy)?;
                    store.add_grad(input, dx.data());
                }
                Ok(project(&y, &w))
            }),
        })
    }));

    cases
}
