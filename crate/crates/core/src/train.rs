//! The optimization loop: batch assembly, loss/backward/step, periodic
//! validation, best-checkpoint retention.
//!
//! Every batch holds instances of a single structure (chosen uniformly at
//! random per step), so all sequences in a batch share their length and no
//! padding or pooling ambiguity exists. Instances and answers are drawn
//! with replacement; negatives are drawn uniformly without replacement
//! from the complement of the instance's train-stage answers.
//!
//! The loop is single-threaded and fully seeded: two runs with the same
//! config produce byte-identical metric logs and checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::json;

use pathformer_nn::adam::{adam_step, AdamConfig};
use pathformer_nn::rng::derive;
use pathformer_nn::{ParameterStore, Scalar};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::eval;
use crate::kg::Stage;
use crate::model::{
    save_checkpoint, CheckpointMeta, ExecMode, ModelConfig, PathformerModel, TrainingBatch,
};
use crate::query::{QueryInstance, StructureName};
use crate::sampler::sample_negatives;

/// Loss is appended to the metrics log every this many steps.
pub const LOG_INTERVAL: u64 = 100;

/// Which structures the model sees during training. Everything else is
/// answered zero-shot at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// The five conjunctive structures: 1p, 2p, 3p, 2i, 3i.
    Epfo5,
    /// The five plus the negation structures: 2in, 3in, inp, pin, pni.
    Fol10,
}

impl Regime {
    pub fn structures(self) -> Vec<StructureName> {
        let mut out = vec![
            StructureName::OneP,
            StructureName::TwoP,
            StructureName::ThreeP,
            StructureName::TwoI,
            StructureName::ThreeI,
        ];
        if self == Regime::Fol10 {
            out.extend(StructureName::negation());
        }
        out
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Epfo5 => "epfo-5",
            Regime::Fol10 => "fol-10",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "epfo-5" => Ok(Regime::Epfo5),
            "fol-10" => Ok(Regime::Fol10),
            other => Err(format!("unknown regime '{other}' (expected epfo-5|fol-10)")),
        }
    }
}

/// Everything the loop needs. Architecture lives in `model`; `seed` drives
/// weight init, batch order, answer draws, negatives, and dropout alike.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub model: ModelConfig,
    pub lr: f64,
    /// Negative samples per positive.
    pub u: usize,
    pub batch: usize,
    pub steps: u64,
    pub valid_interval: u64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults that train in seconds on fixture graphs.
    pub fn desk(n_entities: usize, n_relations: usize) -> TrainConfig {
        TrainConfig {
            regime: Regime::Epfo5,
            model: ModelConfig::desk(n_entities, n_relations),
            lr: 1e-3,
            u: 16,
            batch: 64,
            steps: 5000,
            valid_interval: 1000,
            seed: 42,
        }
    }

    /// The published full-scale recipe (FB15k-237-class graphs): wide
    /// embeddings, six encoder layers, large batches, margin 24.
    pub fn paper_scale(n_entities: usize, n_relations: usize) -> TrainConfig {
        let mut cfg = TrainConfig::desk(n_entities, n_relations);
        cfg.regime = Regime::Fol10;
        cfg.model.d = 800;
        cfg.model.k1 = 6;
        cfg.model.heads = 8;
        cfg.model.d_ffn = 3200; // 4d
        cfg.model.dropout = 0.1;
        cfg.model.gamma = 24.0;
        cfg.lr = 1e-4;
        cfg.u = 128;
        cfg.batch = 512;
        cfg.steps = 300_000;
        cfg.valid_interval = 10_000;
        cfg
    }

    /// Read overrides from a flat key=value config; keys mirror the field
    /// names. Unconsumed keys are the caller's to reject via `kv.finish()`.
    pub fn from_kv(
        kv: &mut KvConfig,
        n_entities: usize,
        n_relations: usize,
    ) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::desk(n_entities, n_relations);
        if let Some(r) = kv.take::<Regime>("regime")? {
            cfg.regime = r;
        }
        cfg.model.d = kv.take_or("d", cfg.model.d)?;
        cfg.model.k1 = kv.take_or("k1", cfg.model.k1)?;
        cfg.model.k2 = kv.take_or("k2", cfg.model.k2)?;
        cfg.model.heads = kv.take_or("heads", cfg.model.heads)?;
        // Follows the width unless set explicitly.
        cfg.model.d_ffn = kv.take_or("d_ffn", 4 * cfg.model.d)?;
        cfg.model.dropout = kv.take_or("dropout", cfg.model.dropout)?;
        cfg.model.mask = kv.take_or("mask", cfg.model.mask)?;
        cfg.model.positional = kv.take_or("positional", cfg.model.positional)?;
        if let Some(f) = kv.take::<String>("fork")? {
            cfg.model.fork_encoder = f;
        }
        cfg.model.gamma = kv.take_or("gamma", cfg.model.gamma)?;
        cfg.lr = kv.take_or("lr", cfg.lr)?;
        cfg.u = kv.take_or("u", cfg.u)?;
        cfg.batch = kv.take_or("batch", cfg.batch)?;
        cfg.steps = kv.take_or("steps", cfg.steps)?;
        cfg.valid_interval = kv.take_or("valid_interval", cfg.valid_interval)?;
        cfg.seed = kv.take_or("seed", cfg.seed)?;
        cfg.model.init_seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.u == 0 || self.batch == 0 {
            return bad(format!("u={} and batch={} must be at least 1", self.u, self.batch));
        }
        if self.steps == 0 || self.valid_interval == 0 {
            return bad("steps and valid_interval must be at least 1".to_string());
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        Ok(())
    }
}

/// What a finished run looked like.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_loss: f64,
    /// Step and mean validation MRR of the saved checkpoint, when
    /// validation ran; otherwise the final weights were saved.
    pub best: Option<(u64, f64)>,
    pub checkpoint: PathBuf,
}

/// The non-finite-loss abort, factored out so the failure mode has a test
/// that doesn't require blowing up a real model.
fn guard_finite(loss: f64, step: u64, structure: StructureName) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss { step, structure })
    }
}

/// Run the full loop: per step, draw one structure, assemble one batch,
/// take one Adam step. Logs `{"step","loss","structure"}` JSON lines every
/// [`LOG_INTERVAL`] steps (after a metadata header line); validates every
/// `valid_interval` steps and keeps the checkpoint with the best mean
/// validation MRR over the regime's structures. Without usable validation
/// instances the final weights are saved instead.
pub fn train<T: Scalar>(
    instances: &[QueryInstance],
    valid_instances: &[QueryInstance],
    config: &TrainConfig,
    checkpoint_path: &Path,
    log: &mut dyn Write,
) -> Result<TrainSummary> {
    config.validate()?;
    let admissible = config.regime.structures();

    // Partition by structure, enforcing the regime and the answer
    // precondition up front so failures name the offender.
    let mut pools: std::collections::BTreeMap<StructureName, Vec<&QueryInstance>> =
        std::collections::BTreeMap::new();
    for inst in instances {
        if !admissible.contains(&inst.structure) {
            return Err(Error::Misuse(format!(
                "structure {} is not admissible under the {} regime",
                inst.structure, config.regime
            )));
        }
        if inst.answers_train.is_empty() {
            return Err(Error::Misuse(format!(
                "a {} instance has no train-stage answers to learn from",
                inst.structure
            )));
        }
        pools.entry(inst.structure).or_default().push(inst);
    }
    if pools.is_empty() {
        return Err(Error::Misuse("no training instances given".to_string()));
    }
    let structures: Vec<StructureName> = pools.keys().copied().collect();

    let mut store = ParameterStore::<T>::new();
    let model = PathformerModel::init(&mut store, config.model.clone())?;
    let mut rng = derive(config.seed, 0x74726169); // batch/draw stream
    let adam = AdamConfig::with_lr(config.lr);

    let header = json!({
        "kind": "train-log",
        "seed": config.seed,
        "regime": config.regime.to_string(),
        "steps": config.steps,
        "batch": config.batch,
        "u": config.u,
        "lr": config.lr,
        "gamma": config.model.gamma,
    });
    writeln!(log, "{header}").map_err(|e| Error::io("<metrics-log>", e))?;

    let n_entities = config.model.n_entities;
    let mut best: Option<(u64, f64)> = None;
    let mut final_loss = f64::NAN;
    for step in 1..=config.steps {
        let structure = structures[rng.gen_range(0..structures.len())];
        let pool = &pools[&structure];
        let mut batch_insts = Vec::with_capacity(config.batch);
        let mut positives = Vec::with_capacity(config.batch);
        let mut negatives = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let inst = pool[rng.gen_range(0..pool.len())];
            positives.push(inst.answers_train[rng.gen_range(0..inst.answers_train.len())]);
            negatives.push(sample_negatives(
                n_entities,
                &inst.answers_train,
                config.u,
                structure,
                &mut rng,
            )?);
            batch_insts.push(inst.clone());
        }
        let batch = TrainingBatch::build(&batch_insts, positives, negatives)?;
        let mode = ExecMode::Train { seed: config.seed, step };
        let loss = guard_finite(
            model.batch_loss(&mut store, &batch, mode, None, true)?,
            step,
            structure,
        )?;
        adam_step(&mut store, &adam)?;
        final_loss = loss;

        if step % LOG_INTERVAL == 0 {
            let line = json!({ "step": step, "loss": loss, "structure": structure.to_string() });
            writeln!(log, "{line}").map_err(|e| Error::io("<metrics-log>", e))?;
        }

        if (step % config.valid_interval == 0 || step == config.steps)
            && !valid_instances.is_empty()
        {
            let report = eval::mrr(&model, &store, valid_instances, Stage::Valid)?;
            if let Some(metric) = report.mean_over(&admissible) {
                if best.map_or(true, |(_, b)| metric > b) {
                    best = Some((step, metric));
                    let meta = CheckpointMeta {
                        model: config.model.clone(),
                        seed: config.seed,
                        step,
                        valid_mrr: Some(metric),
                    };
                    save_checkpoint(checkpoint_path, &store, &meta, false)?;
                }
            }
        }
    }

    if best.is_none() {
        let meta = CheckpointMeta {
            model: config.model.clone(),
            seed: config.seed,
            step: config.steps,
            valid_mrr: None,
        };
        save_checkpoint(checkpoint_path, &store, &meta, false)?;
    }
    Ok(TrainSummary {
        steps: config.steps,
        final_loss,
        best,
        checkpoint: checkpoint_path.to_path_buf(),
    })
}
