//! Finite-difference cases for this crate's differentiable pieces.
//!
//! The layer-level cases live with the layers (`pathformer_nn::gradcheck`);
//! here we add the model-level ones — the fork architectures, the min-L1
//! distance, and full loss-through-model runs that exercise path encoding,
//! forks, negation tokens, disjunct minima, and dropout in one graph.
//! [`full_suite`] chains both sets; the CLI's `gradcheck` command runs it.

use pathformer_nn::gradcheck::{
    nn_cases, projection_grad, read_input, run_cases, scalarizer, FdCase, FdInstance,
};
use pathformer_nn::rng::derive;
use pathformer_nn::{Init, MaskMode, ParameterStore, Pass, PositionalEncoding, Tensor};

pub use pathformer_nn::gradcheck::{all_passed, format_report, CheckResult};

use crate::kg::{EntityId, RelationId};
use crate::model::fork::{build_fork_encoder, fork_encoder_kinds};
use crate::model::{distance, ExecMode, ModelConfig, PathformerModel, TrainingBatch};
use crate::query::{QueryInstance, StructureName};
use crate::Result;

/// A store-registered random input with a name of our choosing (the nn
/// helper hard-codes the name "input"; fork cases need two).
fn named_input(
    store: &mut ParameterStore<f64>,
    name: &str,
    dims: &[usize],
    rng: &mut rand_chacha::ChaCha20Rng,
) -> pathformer_nn::Result<pathformer_nn::ParamId> {
    store.register(name, dims, Init::Uniform { lo: -1.0, hi: 1.0 }, rng)
}

/// Case closures hand errors back through the harness's own error type.
fn lift<T>(r: Result<T>) -> pathformer_nn::Result<T> {
    r.map_err(|e| pathformer_nn::Error::Case(e.to_string()))
}

fn small_config(fork: &str, dropout: f64, init_seed: u64) -> ModelConfig {
    ModelConfig {
        d: 8,
        k1: 1,
        heads: 2,
        d_ffn: 16,
        dropout,
        mask: MaskMode::Bidirectional,
        positional: PositionalEncoding::Sinusoidal,
        k2: 2,
        fork_encoder: fork.to_string(),
        gamma: 4.0,
        n_entities: 10,
        n_relations: 3,
        init_seed,
    }
}

/// Build one training batch of a given structure with fixed ids; ids stay
/// inside the 10-entity / 3-relation vocabulary of [`small_config`].
fn small_batch(structure: StructureName) -> Result<TrainingBatch> {
    let grounding: Vec<(Vec<u32>, Vec<u32>)> = match structure.arity() {
        (1, 1) => vec![(vec![0], vec![0]), (vec![3], vec![2])],
        (1, 2) => vec![(vec![0], vec![0, 1]), (vec![3], vec![2, 0])],
        (2, 2) => vec![(vec![0, 1], vec![0, 1]), (vec![3, 4], vec![2, 0])],
        (2, 3) => vec![(vec![0, 1], vec![0, 1, 2]), (vec![3, 4], vec![2, 0, 1])],
        (3, 3) => vec![(vec![0, 1, 2], vec![0, 1, 2]), (vec![3, 4, 5], vec![2, 0, 1])],
        other => panic!("no grounding table for arity {other:?}"),
    };
    let instances: Vec<QueryInstance> = grounding
        .into_iter()
        .map(|(a, r)| QueryInstance {
            structure,
            anchors: a.into_iter().map(EntityId).collect(),
            relations: r.into_iter().map(RelationId).collect(),
            answers_train: vec![],
            answers_valid: vec![],
            answers_test: vec![],
        })
        .collect();
    TrainingBatch::build(
        &instances,
        vec![EntityId(6), EntityId(7)],
        vec![vec![EntityId(8), EntityId(9)], vec![EntityId(5), EntityId(8)]],
    )
}

/// Model-level finite-difference cases.
pub fn model_cases() -> Vec<FdCase> {
    let mut cases = Vec::new();

    // Every registered fork architecture, checked in isolation on random
    // branch vectors.
    for kind in fork_encoder_kinds() {
        cases.push(FdCase::new(format!("fork_{kind}"), move |seed| {
            let mut rng = derive(seed, 0x6b666f);
            let mut store = ParameterStore::new();
            let (b, d) = (3usize, 8usize);
            let left = named_input(&mut store, "left", &[b, d], &mut rng)?;
            let right = named_input(&mut store, "right", &[b, d], &mut rng)?;
            let fork = lift(build_fork_encoder(&mut store, &small_config(kind, 0.0, seed)))?;
            let w = scalarizer(&mut rng, b * d);
            Ok(FdInstance {
                store,
                run: Box::new(move |store, with_grad, kink| {
                    let l = read_input(store, left, &[b, d]);
                    let r = read_input(store, right, &[b, d]);
                    let mut pass = Pass::inference();
                    if let Some(meter) = kink {
                        pass = pass.with_kink(meter);
                    }
                    let (y, cache) = lift(fork.forward(store, &l, &r, &pass))?;
                    if with_grad {
                        let dy = projection_grad(y.dims(), &w);
                        let (dl, dr) = lift(cache.backward(store, &dy))?;
                        store.add_grad(left, dl.data());
                        store.add_grad(right, dr.data());
                    }
                    Ok(pathformer_nn::gradcheck::project(&y, &w))
                }),
            })
        }));
    }

    // The distance head: L1 minimized over two disjunct vectors. The scalar
    // under test is the distance itself.
    cases.push(FdCase::new("distance_min_l1", |seed| {
        let mut rng = derive(seed, 0x6d696e);
        let mut store = ParameterStore::new();
        let d = 8usize;
        let entity = named_input(&mut store, "entity", &[d], &mut rng)?;
        let queries = named_input(&mut store, "queries", &[2, d], &mut rng)?;
        Ok(FdInstance {
            store,
            run: Box::new(move |store, with_grad, kink| {
                let e = store.value(entity).to_vec();
                let q = read_input(store, queries, &[2, d]);
                let (dist, arg) = distance::min_l1(&e, &[q.row(0), q.row(1)], kink);
                if with_grad {
                    let mut d_e = vec![0.0f64; d];
                    let mut d_q = Tensor::zeros(&[2, d]);
                    distance::min_l1_backward(&e, q.row(arg), 1.0, &mut d_e, d_q.row_mut(arg));
                    store.add_grad(entity, &d_e);
                    store.add_grad(queries, d_q.data());
                }
                Ok(dist)
            }),
        })
    }));

    // Whole-model cases: the scalar is the training loss, so every weight in
    // the store gets checked — embeddings, encoder, fork, negation token.
    let model_case = |name: &str, structure: StructureName, fork: &'static str, dropout: f64| {
        FdCase::new(name, move |seed| {
            let mut store = ParameterStore::new();
            let model = lift(PathformerModel::init(&mut store, small_config(fork, dropout, seed)))?;
            let batch = lift(small_batch(structure))?;
            // Fixed mode keys: dropout masks depend only on (seed, step,
            // unit, site, element), so they are constant under parameter
            // perturbation and finite differences stay valid.
            let mode = if dropout > 0.0 {
                ExecMode::Train { seed: 7, step: 3 }
            } else {
                ExecMode::Inference
            };
            Ok(FdInstance {
                store,
                run: Box::new(move |store, with_grad, kink| {
                    lift(model.batch_loss(store, &batch, mode, kink, with_grad))
                }),
            })
        })
    };
    // pin: 2-hop path, negated branch (negation token), and a fork.
    cases.push(model_case("model_loss_pin", StructureName::Pin, "mlp", 0.0));
    // 3i with the mixer fork: two chained fork steps.
    cases.push(model_case("model_loss_3i_mixer", StructureName::ThreeI, "mixer", 0.0));
    // up: two disjuncts, so the min over query vectors is live.
    cases.push(model_case("model_loss_up", StructureName::Up, "mlp", 0.0));
    // Dropout active during the loss, under fixed mask keys.
    cases.push(model_case("model_loss_2p_dropout", StructureName::TwoP, "mlp", 0.3));

    cases
}

/// Every finite-difference case: layer-level ones from the nn crate, then
/// the model-level ones above.
pub fn full_suite() -> Vec<FdCase> {
    let mut cases = nn_cases();
    cases.extend(model_cases());
    cases
}

/// Run the full suite and render the report; `Ok(report)` when every case
/// passed, `Err` with the same report text otherwise.
pub fn run_full_suite(seed: u64, draws: usize) -> Result<String> {
    let mut cases = full_suite();
    let results = run_cases(&mut cases, seed, draws)?;
    let report = format_report(&results);
    if all_passed(&results) {
        Ok(report)
    } else {
        Err(crate::Error::Misuse(format!("gradient check failed:\n{report}")))
    }
}
