//! Filtered-rank evaluation: per-structure mean reciprocal rank and
//! side-by-side model comparisons.
//!
//! An answer entity is ranked by distance against the candidate pool
//! `{e} ∪ (V − answers_stage)` — every *other* true answer at the evaluated
//! stage is filtered out, so easy co-answers never inflate an entity's
//! rank. Ties contribute half a rank step, which is deterministic and
//! biased in neither direction. A query's metric is the mean reciprocal
//! rank over its non-trivial answers (the ones that require predicted
//! edges, except at the train stage where all answers qualify); a
//! structure's score is the mean over its queries.
//!
//! Queries are evaluated in parallel; scores are reduced in instance order,
//! so reports are byte-stable across thread counts.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::json;

use pathformer_nn::{ParameterStore, Scalar};

use crate::error::{Error, Result};
use crate::kg::{EntityId, Stage};
use crate::model::{distance, PathformerModel};
use crate::query::{QueryInstance, StructureName};

/// Rank of an entity at distance `d_e` against the rest of its candidate
/// pool: `1 + |closer| + ½·|tied|`.
pub fn rank_among(d_e: f64, others: impl IntoIterator<Item = f64>) -> f64 {
    let mut rank = 1.0;
    for d in others {
        if d < d_e {
            rank += 1.0;
        } else if d == d_e {
            rank += 0.5;
        }
    }
    rank
}

/// Distance from every entity in the vocabulary to one query's disjunct
/// vectors.
pub fn entity_distances<T: Scalar>(
    model: &PathformerModel<T>,
    store: &ParameterStore<T>,
    disjuncts: &[&[T]],
) -> Result<Vec<f64>> {
    (0..model.config.n_entities as u32)
        .map(|c| Ok(distance::min_l1(model.entity_vector(store, EntityId(c))?, disjuncts, None).0))
        .collect()
}

/// Filtered rank of `e` for one query instance at `stage`.
///
/// `e` must be one of the instance's non-trivial answers at that stage.
pub fn rank_entity<T: Scalar>(
    model: &PathformerModel<T>,
    store: &ParameterStore<T>,
    instance: &QueryInstance,
    e: EntityId,
    stage: Stage,
) -> Result<f64> {
    if !instance.non_trivial_answers(stage).contains(&e) {
        return Err(Error::Misuse(format!(
            "entity {e} is not a non-trivial {stage}-stage answer of this query"
        )));
    }
    let qv = model.encode_queries(store, std::slice::from_ref(instance))?;
    let dist = entity_distances(model, store, &qv.query(0))?;
    Ok(rank_for(&dist, instance.answers(stage), e))
}

/// Rank `e` given the precomputed distance table and the stage's full
/// answer list (sorted); other answers are excluded from the pool.
fn rank_for(dist: &[f64], answers: &[EntityId], e: EntityId) -> f64 {
    let d_e = dist[e.0 as usize];
    let others = dist.iter().enumerate().filter_map(|(c, &d)| {
        let c = EntityId(c as u32);
        if c == e || answers.binary_search(&c).is_ok() {
            None
        } else {
            Some(d)
        }
    });
    rank_among(d_e, others)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureMetrics {
    /// Mean reciprocal rank, raw (in `[0, 1]`).
    pub mrr: f64,
    /// Queries that contributed (those with non-trivial answers).
    pub queries: usize,
}

/// Per-structure scores plus the two headline means.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub stage: Stage,
    pub per_structure: BTreeMap<StructureName, StructureMetrics>,
}

impl RankingReport {
    /// Mean raw MRR over the given group, restricted to structures present
    /// in the report; `None` when none are.
    pub fn mean_over(&self, group: &[StructureName]) -> Option<f64> {
        let scores: Vec<f64> = group
            .iter()
            .filter_map(|s| self.per_structure.get(s).map(|m| m.mrr))
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }

    /// Mean over the nine structures answerable without negation.
    pub fn epfo_mean(&self) -> Option<f64> {
        self.mean_over(&StructureName::epfo())
    }

    /// Mean over the five negation structures.
    pub fn negation_mean(&self) -> Option<f64> {
        self.mean_over(&StructureName::negation())
    }

    /// JSON object keyed by structure name, with raw and ×100 values.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("stage".to_string(), json!(self.stage.to_string()));
        for (s, m) in &self.per_structure {
            obj.insert(
                s.to_string(),
                json!({ "mrr": m.mrr, "mrr_pct": 100.0 * m.mrr, "queries": m.queries }),
            );
        }
        let means = [
            ("epfo_mean", self.epfo_mean()),
            ("negation_mean", self.negation_mean()),
        ];
        for (key, v) in means {
            obj.insert(key.to_string(), json!(v));
            obj.insert(format!("{key}_pct"), json!(v.map(|x| 100.0 * x)));
        }
        serde_json::Value::Object(obj)
    }

    /// Aligned-column text rendering (MRR as percentages).
    pub fn render_text(&self) -> String {
        let mut out = format!("stage: {}\n{:<10} {:>8} {:>9}\n", self.stage, "structure", "MRR%", "queries");
        for (s, m) in &self.per_structure {
            out.push_str(&format!("{:<10} {:>8.2} {:>9}\n", s.to_string(), 100.0 * m.mrr, m.queries));
        }
        if let Some(v) = self.epfo_mean() {
            out.push_str(&format!("{:<10} {:>8.2}\n", "epfo-avg", 100.0 * v));
        }
        if let Some(v) = self.negation_mean() {
            out.push_str(&format!("{:<10} {:>8.2}\n", "neg-avg", 100.0 * v));
        }
        out
    }
}

/// Per-structure filtered MRR over `instances` at `stage`.
///
/// Instances with an empty non-trivial answer set at `stage` are skipped
/// (they carry no evaluable signal); everything else contributes one
/// metric value to its structure's mean.
pub fn mrr<T: Scalar>(
    model: &PathformerModel<T>,
    store: &ParameterStore<T>,
    instances: &[QueryInstance],
    stage: Stage,
) -> Result<RankingReport> {
    let mut by_structure: BTreeMap<StructureName, Vec<QueryInstance>> = BTreeMap::new();
    for inst in instances {
        by_structure.entry(inst.structure).or_default().push(inst.clone());
    }
    let mut per_structure = BTreeMap::new();
    for (structure, insts) in by_structure {
        let qv = model.encode_queries(store, &insts)?;
        let metrics: Vec<Result<Option<f64>>> = insts
            .par_iter()
            .enumerate()
            .map(|(i, inst)| {
                let evaluated = inst.non_trivial_answers(stage);
                if evaluated.is_empty() {
                    return Ok(None);
                }
                let dist = entity_distances(model, store, &qv.query(i))?;
                let answers = inst.answers(stage);
                let mut sum = 0.0;
                for &e in &evaluated {
                    sum += 1.0 / rank_for(&dist, answers, e);
                }
                Ok(Some(sum / evaluated.len() as f64))
            })
            .collect();
        let mut sum = 0.0;
        let mut n = 0usize;
        for m in metrics {
            if let Some(v) = m? {
                sum += v;
                n += 1;
            }
        }
        if n > 0 {
            per_structure.insert(structure, StructureMetrics { mrr: sum / n as f64, queries: n });
        }
    }
    Ok(RankingReport { stage, per_structure })
}

/// Several models evaluated on the same instances, for ablation studies.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub names: Vec<String>,
    pub reports: Vec<RankingReport>,
}

/// Evaluate each named model on the same instances. All models must share
/// the vocabulary sizes of the first.
pub fn ablation_table<T: Scalar>(
    models: &[(String, &PathformerModel<T>, &ParameterStore<T>)],
    instances: &[QueryInstance],
    stage: Stage,
) -> Result<AblationTable> {
    let (_, first, _) = models
        .first()
        .ok_or_else(|| Error::Misuse("ablation table needs at least one model".to_string()))?;
    let mut names = Vec::new();
    let mut reports = Vec::new();
    for (name, model, store) in models {
        if model.config.n_entities != first.config.n_entities
            || model.config.n_relations != first.config.n_relations
        {
            return Err(Error::VocabMismatch(format!(
                "model '{name}' has {}x{} vocabulary, expected {}x{}",
                model.config.n_entities,
                model.config.n_relations,
                first.config.n_entities,
                first.config.n_relations
            )));
        }
        names.push(name.clone());
        reports.push(mrr(model, store, instances, stage)?);
    }
    Ok(AblationTable { names, reports })
}

impl AblationTable {
    /// Aligned columns, one model each; columns after the first carry the
    /// delta (in MRR percentage points) against the first model.
    pub fn render_text(&self) -> String {
        let mut out = format!("{:<10}", "structure");
        for name in &self.names {
            out.push_str(&format!(" {:>18}", name));
        }
        out.push('\n');
        let pct = |r: &RankingReport, s: StructureName| r.per_structure.get(&s).map(|m| 100.0 * m.mrr);
        let mut rows: Vec<(String, Vec<Option<f64>>)> = StructureName::all()
            .iter()
            .filter(|s| self.reports.iter().any(|r| r.per_structure.contains_key(s)))
            .map(|&s| (s.to_string(), self.reports.iter().map(|r| pct(r, s)).collect()))
            .collect();
        rows.push(("epfo-avg".to_string(), self.reports.iter().map(|r| r.epfo_mean().map(|v| 100.0 * v)).collect()));
        rows.push(("neg-avg".to_string(), self.reports.iter().map(|r| r.negation_mean().map(|v| 100.0 * v)).collect()));
        for (label, cells) in rows {
            out.push_str(&format!("{label:<10}"));
            let base = cells.first().copied().flatten();
            for (i, cell) in cells.iter().enumerate() {
                match cell {
                    None => out.push_str(&format!(" {:>18}", "-")),
                    Some(v) if i == 0 => out.push_str(&format!(" {v:>18.2}")),
                    Some(v) => {
                        let rendered = match base {
                            Some(b) => format!("{:.2} ({:+.2})", v, v - b),
                            None => format!("{v:.2}"),
                        };
                        out.push_str(&format!(" {rendered:>18}"));
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "models": self
                .names
                .iter()
                .zip(&self.reports)
                .map(|(name, report)| json!({ "name": name, "report": report.to_json() }))
                .collect::<Vec<_>>(),
        })
    }
}
