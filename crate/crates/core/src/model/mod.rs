//! The sequence model over decomposed queries.
//!
//! Each path step becomes a token sequence — the start vector (anchor
//! embedding or upstream fork output), then one token per operator: the
//! relation embedding for a projection, a single learned token for
//! negation. A transformer encoder contextualizes the sequence and mean
//! pooling yields the path vector; fork steps merge two branch vectors with
//! a [`fork::ForkEncoder`]. The final slot's vector represents the query,
//! and an entity answers it if its embedding is nearby in L1 distance
//! (minimized over disjuncts).
//!
//! Plans of the same structure are executed batched: one encoder invocation
//! per step shape, every instance a row. Batching is exact — a batched row
//! equals the same instance executed alone.

pub mod distance;
pub mod fork;
pub mod loss;

use std::path::Path;

use serde::{Deserialize, Serialize};

use pathformer_nn::encoder::EncoderCache;
use pathformer_nn::rng::derive;
use pathformer_nn::{
    checkpoint, mean_pool, mean_pool_backward, EncoderConfig, Init, KinkMeter, MaskMode, ParamId,
    ParameterStore, Pass, PositionalEncoding, Scalar, Tensor, TransformerEncoder,
};

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};
use crate::query::{DecompositionPlan, PathOp, PathStart, PlanStep, QueryInstance, SlotId};

use fork::{build_fork_encoder, ForkCache, ForkEncoder};

/// Everything needed to rebuild the architecture; stored in checkpoint
/// metadata so evaluation needs no other source of truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding and encoder width.
    pub d: usize,
    /// Encoder layers per path step.
    pub k1: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub dropout: f64,
    pub mask: MaskMode,
    pub positional: PositionalEncoding,
    /// Fork depth (layers of the merge network).
    pub k2: usize,
    /// Registry name of the fork architecture.
    pub fork_encoder: String,
    /// Distance margin; also scales the embedding init range.
    pub gamma: f64,
    pub n_entities: usize,
    pub n_relations: usize,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

impl ModelConfig {
    /// Small defaults that train in seconds on fixture graphs.
    pub fn desk(n_entities: usize, n_relations: usize) -> ModelConfig {
        ModelConfig {
            d: 32,
            k1: 1,
            heads: 4,
            d_ffn: 128,
            dropout: 0.1,
            mask: MaskMode::Bidirectional,
            positional: PositionalEncoding::Sinusoidal,
            k2: 2,
            fork_encoder: "mlp".to_string(),
            gamma: 12.0,
            n_entities,
            n_relations,
            init_seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || self.k1 == 0 || self.k2 == 0 || self.d_ffn == 0 {
            return bad(format!(
                "d={}, k1={}, k2={}, d_ffn={} must all be positive",
                self.d, self.k1, self.k2, self.d_ffn
            ));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("width {} is not divisible by {} heads", self.d, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return bad(format!("margin gamma {} must be positive", self.gamma));
        }
        if self.n_entities == 0 || self.n_relations == 0 {
            return bad("model needs at least one entity and one relation".to_string());
        }
        Ok(())
    }

    fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d: self.d,
            layers: self.k1,
            heads: self.heads,
            d_ffn: self.d_ffn,
            dropout: self.dropout,
            mask: self.mask,
            positional: self.positional,
        }
    }
}

/// Forward-pass regime: inference is dropout-free; training derives all
/// dropout masks from `(seed, step)` plus the executor's per-step unit, so
/// a step is exactly reproducible.
#[derive(Debug, Clone, Copy)]
pub enum ExecMode {
    Inference,
    Train { seed: u64, step: u64 },
}

// ---------------------------------------------------------------------------
// Batched plans
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchedStart {
    /// Per-instance anchor entities.
    Anchors(Vec<EntityId>),
    /// All instances read the same upstream slot.
    Fork(SlotId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchedPathStep {
    pub start: BatchedStart,
    /// Per-instance operator sequences; identical shape, ids may differ.
    pub ops: Vec<Vec<PathOp>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchedStep {
    Path(BatchedPathStep),
    Fork { left: SlotId, right: SlotId },
}

/// A column of isomorphic plans, ready to execute as one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchedPlan {
    pub steps: Vec<BatchedStep>,
    pub batch: usize,
}

impl BatchedPlan {
    /// Stack plans that share a step skeleton (same step kinds, path
    /// lengths, operator kinds, and fork wiring — the guarantee that plans
    /// of one structure give).
    pub fn from_plans(plans: &[DecompositionPlan]) -> Result<BatchedPlan> {
        let first = plans
            .first()
            .ok_or_else(|| Error::Misuse("cannot batch zero plans".to_string()))?;
        let mismatch = |i: usize| {
            Error::Misuse(format!("plans are not isomorphic at step {i}; batch them by structure"))
        };
        let mut steps = Vec::with_capacity(first.steps.len());
        for (i, step) in first.steps.iter().enumerate() {
            match step {
                PlanStep::Path(p0) => {
                    let mut anchors = Vec::new();
                    let mut ops = Vec::with_capacity(plans.len());
                    for plan in plans {
                        let Some(PlanStep::Path(p)) = plan.steps.get(i) else {
                            return Err(mismatch(i));
                        };
                        if p.ops.len() != p0.ops.len()
                            || p.ops.iter().zip(&p0.ops).any(|(a, b)| {
                                matches!(a, PathOp::Negate) != matches!(b, PathOp::Negate)
                            })
                        {
                            return Err(mismatch(i));
                        }
                        match (p.start, p0.start) {
                            (PathStart::Anchor(e), PathStart::Anchor(_)) => anchors.push(e),
                            (PathStart::Fork(s), PathStart::Fork(s0)) if s == s0 => {}
                            _ => return Err(mismatch(i)),
                        }
                        ops.push(p.ops.clone());
                    }
                    let start = match p0.start {
                        PathStart::Anchor(_) => BatchedStart::Anchors(anchors),
                        PathStart::Fork(s) => BatchedStart::Fork(s),
                    };
                    steps.push(BatchedStep::Path(BatchedPathStep { start, ops }));
                }
                PlanStep::Fork { left, right } => {
                    for plan in plans {
                        if plan.steps.get(i) != Some(step) {
                            return Err(mismatch(i));
                        }
                    }
                    steps.push(BatchedStep::Fork { left: *left, right: *right });
                }
            }
        }
        Ok(BatchedPlan { steps, batch: plans.len() })
    }

    pub fn root_slot(&self) -> SlotId {
        self.steps.len() - 1
    }
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

pub struct PathformerModel<T: Scalar> {
    pub config: ModelConfig,
    entity_table: ParamId,
    relation_table: ParamId,
    negation_token: ParamId,
    encoder: TransformerEncoder,
    fork: Box<dyn ForkEncoder<T>>,
}

/// Per-step caches from a forward pass, consumed by [`PathformerModel::backward`].
pub struct Execution<T: Scalar> {
    /// Slot outputs, `[batch, d]` each.
    pub outputs: Vec<Tensor<T>>,
    records: Vec<StepRecord<T>>,
}

enum StepRecord<T: Scalar> {
    Path { cache: EncoderCache<T>, len: usize },
    Fork { cache: Box<dyn ForkCache<T>> },
}

impl<T: Scalar> Execution<T> {
    /// The query representation: output of the final step.
    pub fn root(&self) -> &Tensor<T> {
        self.outputs.last().expect("plans are non-empty")
    }
}

impl<T: Scalar> PathformerModel<T> {
    /// Register all weights in `store`. Registration order is fixed, so a
    /// store built from the same config always matches a checkpoint of it.
    pub fn init(store: &mut ParameterStore<T>, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let bound = config.gamma / config.d as f64;
        let emb = Init::Uniform { lo: -bound, hi: bound };
        let mut rng = derive(config.init_seed, 0x656d62); // embedding stream
        let entity_table =
            store.register("embed/entity", &[config.n_entities, config.d], emb, &mut rng)?;
        let relation_table =
            store.register("embed/relation", &[config.n_relations, config.d], emb, &mut rng)?;
        let negation_token = store.register("embed/negation", &[config.d], emb, &mut rng)?;
        let mut enc_rng = derive(config.init_seed, 0x656e63); // encoder stream
        let encoder =
            TransformerEncoder::init(store, "encoder", config.encoder_config(), 0, &mut enc_rng)?;
        let fork = build_fork_encoder(store, &config)?;
        Ok(PathformerModel { config, entity_table, relation_table, negation_token, encoder, fork })
    }

    pub fn entity_vector<'s>(&self, store: &'s ParameterStore<T>, e: EntityId) -> Result<&'s [T]> {
        let d = self.config.d;
        if (e.0 as usize) >= self.config.n_entities {
            return Err(Error::UnknownId { kind: "entity", id: e.0, size: self.config.n_entities });
        }
        let base = e.0 as usize * d;
        Ok(&store.value(self.entity_table)[base..base + d])
    }

    fn relation_vector<'s>(&self, store: &'s ParameterStore<T>, r: RelationId) -> Result<&'s [T]> {
        let d = self.config.d;
        if (r.0 as usize) >= self.config.n_relations {
            return Err(Error::UnknownId {
                kind: "relation",
                id: r.0,
                size: self.config.n_relations,
            });
        }
        let base = r.0 as usize * d;
        Ok(&store.value(self.relation_table)[base..base + d])
    }

    /// Run a batched plan; slot `i` of the result holds step `i`'s vectors.
    pub fn execute(
        &self,
        store: &ParameterStore<T>,
        plan: &BatchedPlan,
        mode: ExecMode,
        kink: Option<&KinkMeter>,
    ) -> Result<Execution<T>> {
        let d = self.config.d;
        let b = plan.batch;
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(plan.steps.len());
        let mut records = Vec::with_capacity(plan.steps.len());
        for (i, step) in plan.steps.iter().enumerate() {
            // Each step is a distinct dropout unit so repeated encoder
            // invocations within one optimization step get fresh masks.
            let mut pass = match mode {
                ExecMode::Inference => Pass::inference(),
                ExecMode::Train { seed, step } => Pass::train(seed, step, i as u64),
            };
            if let Some(meter) = kink {
                pass = pass.with_kink(meter);
            }
            match step {
                BatchedStep::Path(p) => {
                    let n_ops = p.ops[0].len();
                    let len = 1 + n_ops;
                    let mut x = Tensor::zeros(&[b, len, d]);
                    for bi in 0..b {
                        match &p.start {
                            BatchedStart::Anchors(ids) => {
                                x.row3_mut(bi, 0).copy_from_slice(self.entity_vector(store, ids[bi])?)
                            }
                            BatchedStart::Fork(s) => {
                                x.row3_mut(bi, 0).copy_from_slice(outputs[*s].row(bi))
                            }
                        }
                        for (j, op) in p.ops[bi].iter().enumerate() {
                            let src = match op {
                                PathOp::Project(r) => self.relation_vector(store, *r)?,
                                PathOp::Negate => store.value(self.negation_token),
                            };
                            x.row3_mut(bi, 1 + j).copy_from_slice(src);
                        }
                    }
                    let (enc, cache) = self.encoder.forward(store, &x, self.config.mask, &pass)?;
                    outputs.push(mean_pool(&enc)?);
                    records.push(StepRecord::Path { cache, len });
                }
                BatchedStep::Fork { left, right } => {
                    let (out, cache) =
                        self.fork.forward(store, &outputs[*left], &outputs[*right], &pass)?;
                    outputs.push(out);
                    records.push(StepRecord::Fork { cache });
                }
            }
        }
        Ok(Execution { outputs, records })
    }

    /// Backpropagate `d_root` (gradient at the final slot) through the plan,
    /// accumulating weight and embedding gradients.
    pub fn backward(
        &self,
        store: &mut ParameterStore<T>,
        plan: &BatchedPlan,
        exec: &Execution<T>,
        d_root: &Tensor<T>,
    ) -> Result<()> {
        let d = self.config.d;
        let n = plan.steps.len();
        let mut d_slots: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        d_slots[n - 1] = Some(d_root.clone());
        for i in (0..n).rev() {
            let Some(d_out) = d_slots[i].take() else {
                continue; // slot never influenced the root
            };
            match (&plan.steps[i], &exec.records[i]) {
                (BatchedStep::Path(p), StepRecord::Path { cache, len }) => {
                    let dy = mean_pool_backward(&d_out, *len)?;
                    let dx = self.encoder.backward(store, cache, &dy)?;
                    for bi in 0..plan.batch {
                        match &p.start {
                            BatchedStart::Anchors(ids) => {
                                let base = ids[bi].0 as usize * d;
                                for k in 0..d {
                                    store.add_grad_at(
                                        self.entity_table,
                                        base + k,
                                        dx.data()[dx.at3(bi, 0, k)],
                                    );
                                }
                            }
                            BatchedStart::Fork(s) => {
                                let row = dx.row3(bi, 0).to_vec();
                                accumulate_row(&mut d_slots[*s], plan.batch, d, bi, &row);
                            }
                        }
                        for (j, op) in p.ops[bi].iter().enumerate() {
                            let (id, base) = match op {
                                PathOp::Project(r) => {
                                    (self.relation_table, r.0 as usize * d)
                                }
                                PathOp::Negate => (self.negation_token, 0),
                            };
                            for k in 0..d {
                                store.add_grad_at(id, base + k, dx.data()[dx.at3(bi, 1 + j, k)]);
                            }
                        }
                    }
                }
                (BatchedStep::Fork { left, right }, StepRecord::Fork { cache }) => {
                    let (dl, dr) = cache.backward(store, &d_out)?;
                    accumulate(&mut d_slots[*left], dl)?;
                    accumulate(&mut d_slots[*right], dr)?;
                }
                _ => {
                    return Err(Error::Misuse(
                        "execution cache does not match the plan it came from".to_string(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Inference encodings for instances of one structure: row `i·m + k` of
    /// the result is disjunct `k` of instance `i`.
    pub fn encode_queries(
        &self,
        store: &ParameterStore<T>,
        instances: &[QueryInstance],
    ) -> Result<QueryVectors<T>> {
        let (plan, disjuncts) = batch_instances(instances)?;
        let exec = self.execute(store, &plan, ExecMode::Inference, None)?;
        Ok(QueryVectors { data: exec.root().clone(), disjuncts })
    }

    /// Mean margin loss over a training batch; with `with_grad`, also
    /// accumulates all gradients (embeddings included) into the store.
    pub fn batch_loss(
        &self,
        store: &mut ParameterStore<T>,
        batch: &TrainingBatch,
        mode: ExecMode,
        kink: Option<&KinkMeter>,
        with_grad: bool,
    ) -> Result<f64> {
        let d = self.config.d;
        let m = batch.disjuncts;
        let bsz = batch.positives.len();
        let exec = self.execute(store, &batch.plan, mode, kink)?;
        let root = exec.root();

        let mut pos = Vec::with_capacity(bsz);
        let mut pos_arg = Vec::with_capacity(bsz);
        let mut neg = Vec::with_capacity(bsz);
        let mut neg_arg = Vec::with_capacity(bsz);
        for bi in 0..bsz {
            let queries: Vec<&[T]> = (0..m).map(|k| root.row(bi * m + k)).collect();
            let (dist, arg) = distance::min_l1(self.entity_vector(store, batch.positives[bi])?, &queries, kink);
            pos.push(dist);
            pos_arg.push(arg);
            let mut row = Vec::with_capacity(batch.negatives[bi].len());
            let mut row_arg = Vec::with_capacity(batch.negatives[bi].len());
            for &e in &batch.negatives[bi] {
                let (dist, arg) = distance::min_l1(self.entity_vector(store, e)?, &queries, kink);
                row.push(dist);
                row_arg.push(arg);
            }
            neg.push(row);
            neg_arg.push(row_arg);
        }
        let (loss_value, grads) = loss::margin_loss(self.config.gamma, &pos, &neg);
        if !with_grad {
            return Ok(loss_value);
        }

        let mut d_root = Tensor::zeros(&[bsz * m, d]);
        let scatter = |store: &mut ParameterStore<T>,
                           d_root: &mut Tensor<T>,
                           entity: EntityId,
                           scale: f64,
                           row_idx: usize|
         -> Result<()> {
            let e_vals = self.entity_vector(store, entity)?.to_vec();
            let mut d_e = vec![T::zero(); d];
            distance::min_l1_backward(
                &e_vals,
                root.row(row_idx),
                scale,
                &mut d_e,
                d_root.row_mut(row_idx),
            );
            let base = entity.0 as usize * d;
            for k in 0..d {
                store.add_grad_at(self.entity_table, base + k, d_e[k]);
            }
            Ok(())
        };
        for bi in 0..bsz {
            scatter(store, &mut d_root, batch.positives[bi], grads.d_pos[bi], bi * m + pos_arg[bi])?;
            for (j, &e) in batch.negatives[bi].iter().enumerate() {
                scatter(store, &mut d_root, e, grads.d_neg[bi][j], bi * m + neg_arg[bi][j])?;
            }
        }
        self.backward(store, &batch.plan, &exec, &d_root)?;
        Ok(loss_value)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, add: Tensor<T>) -> Result<()> {
    match slot {
        None => *slot = Some(add),
        Some(t) => t.add_assign(&add)?,
    }
    Ok(())
}

fn accumulate_row<T: Scalar>(
    slot: &mut Option<Tensor<T>>,
    batch: usize,
    d: usize,
    row: usize,
    add: &[T],
) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(&[batch, d]));
    for (dst, &src) in t.row_mut(row).iter_mut().zip(add) {
        *dst += src;
    }
}

/// Decompose and batch instances that share one structure; returns the plan
/// (batch size = instances × disjuncts, instance-major) and the disjunct
/// count.
fn batch_instances(instances: &[QueryInstance]) -> Result<(BatchedPlan, usize)> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Misuse("cannot encode zero instances".to_string()))?;
    let mut all = Vec::new();
    let mut disjuncts = None;
    for inst in instances {
        if inst.structure != first.structure {
            return Err(Error::Misuse(format!(
                "cannot batch structures {} and {} together",
                first.structure, inst.structure
            )));
        }
        let plans = inst.tree()?.decompose()?;
        match disjuncts {
            None => disjuncts = Some(plans.len()),
            Some(m) if m == plans.len() => {}
            Some(m) => {
                return Err(Error::Misuse(format!(
                    "instance of {} produced {} disjuncts, expected {m}",
                    inst.structure,
                    plans.len()
                )))
            }
        }
        all.extend(plans);
    }
    Ok((BatchedPlan::from_plans(&all)?, disjuncts.unwrap()))
}

/// Query vectors for a slice of same-structure instances.
#[derive(Debug, Clone)]
pub struct QueryVectors<T: Scalar> {
    data: Tensor<T>,
    pub disjuncts: usize,
}

impl<T: Scalar> QueryVectors<T> {
    pub fn n_queries(&self) -> usize {
        self.data.dims()[0] / self.disjuncts
    }

    /// The disjunct vectors of instance `i`.
    pub fn query(&self, i: usize) -> Vec<&[T]> {
        (0..self.disjuncts).map(|k| self.data.row(i * self.disjuncts + k)).collect()
    }
}

/// One optimization step's worth of work: a batched plan plus positive and
/// negative answer entities per instance.
pub struct TrainingBatch {
    pub plan: BatchedPlan,
    pub disjuncts: usize,
    pub positives: Vec<EntityId>,
    pub negatives: Vec<Vec<EntityId>>,
}

impl TrainingBatch {
    pub fn build(
        instances: &[QueryInstance],
        positives: Vec<EntityId>,
        negatives: Vec<Vec<EntityId>>,
    ) -> Result<TrainingBatch> {
        if positives.len() != instances.len() || negatives.len() != instances.len() {
            return Err(Error::Misuse(format!(
                "batch of {} instances given {} positives / {} negative sets",
                instances.len(),
                positives.len(),
                negatives.len()
            )));
        }
        let (plan, disjuncts) = batch_instances(instances)?;
        Ok(TrainingBatch { plan, disjuncts, positives, negatives })
    }

    pub fn batch_size(&self) -> usize {
        self.positives.len()
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Training seed (weight init and data order).
    pub seed: u64,
    /// Optimization step the weights were taken at.
    pub step: u64,
    /// Mean validation MRR that selected this checkpoint, when known.
    pub valid_mrr: Option<f64>,
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    store: &ParameterStore<T>,
    meta: &CheckpointMeta,
    include_optimizer: bool,
) -> Result<()> {
    let value = serde_json::to_value(meta)
        .map_err(|e| pathformer_nn::Error::Checkpoint(format!("meta serialization: {e}")))?;
    checkpoint::save(path, store, &value, include_optimizer)?;
    Ok(())
}

/// Rebuild a model and its weights from a checkpoint file.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    with_optimizer: bool,
) -> Result<(PathformerModel<T>, ParameterStore<T>, CheckpointMeta)> {
    let raw = checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_value(raw.meta.clone())
        .map_err(|e| pathformer_nn::Error::Checkpoint(format!("unreadable metadata: {e}")))?;
    let mut store = ParameterStore::new();
    let model = PathformerModel::init(&mut store, meta.model.clone())?;
    checkpoint::load_into(&raw, &mut store, with_optimizer)?;
    Ok((model, store, meta))
}
