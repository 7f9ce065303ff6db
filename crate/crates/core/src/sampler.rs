//! Query sampling by backward walks from a known answer.
//!
//! For each requested structure the sampler repeatedly picks a target
//! entity, walks the template backwards from it (each projection follows a
//! random incoming edge, intersection branches all walk from the same
//! target, exactly one union branch carries the target, and negated
//! branches are rejection-sampled until the target is *not* among their
//! answers), then computes exact answer sets with the oracle and keeps the
//! instance if it passes the stage's retention rule:
//!
//! * `train` — answers on the training graph are non-empty;
//! * `valid` / `test` — at least one answer exists on that stage's graph
//!   that does not already hold on the previous one (a non-trivial answer).
//!
//! Oversized answer sets are dropped (`max_answers`), duplicates are kept
//! once, and a per-structure report says how hard the graph made it.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use pathformer_nn::rng::{derive, mix2};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphSplit, KnowledgeGraph, RelationId, Stage};
use crate::oracle;
use crate::query::{QueryInstance, QueryTree, StructureName};

/// Attempts to find a decoy target for one negated branch before the whole
/// grounding attempt is abandoned.
const NEGATION_TRIES: usize = 20;

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Which graph to ground against, and whose retention rule to apply.
    pub stage: Stage,
    pub templates: Vec<StructureName>,
    /// Instances to keep per structure (overridable per structure).
    pub count: usize,
    pub count_overrides: BTreeMap<StructureName, usize>,
    /// Reject instances with more answers than this at the sampled stage.
    pub max_answers: usize,
    /// Grounding attempts allowed per requested instance.
    pub max_tries: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn from_kv(mut kv: KvConfig) -> Result<SamplerConfig> {
        let stage: Stage = kv.require("stage")?;
        let templates = match kv.take::<String>("templates")? {
            None => StructureName::all().to_vec(),
            Some(raw) => raw
                .split(',')
                .map(|s| s.trim().parse::<StructureName>().map_err(Error::Config))
                .collect::<Result<Vec<_>>>()?,
        };
        let count = kv.take_or("count", 100)?;
        let mut count_overrides = BTreeMap::new();
        for (name, value) in kv.take_prefixed("count.") {
            let s: StructureName = name.parse().map_err(Error::Config)?;
            let n: usize = value
                .parse()
                .map_err(|e| Error::Config(format!("count.{name}: cannot parse {value:?}: {e}")))?;
            count_overrides.insert(s, n);
        }
        let max_answers = kv.take_or("max_answers", 100)?;
        let max_tries = kv.take_or("max_tries", 100)?;
        let seed = kv.take_or("seed", 42)?;
        kv.finish()?;
        if templates.is_empty() {
            return Err(Error::Config("templates list is empty".into()));
        }
        Ok(SamplerConfig { stage, templates, count, count_overrides, max_answers, max_tries, seed })
    }

    pub fn requested(&self, s: StructureName) -> usize {
        self.count_overrides.get(&s).copied().unwrap_or(self.count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureStats {
    pub requested: usize,
    pub kept: usize,
    pub attempts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleReport {
    pub stage: Stage,
    pub seed: u64,
    pub structures: BTreeMap<String, StructureStats>,
    /// Structures that fell short of their requested count.
    pub shortfall: Vec<String>,
}

/// Sample query instances for every configured structure.
///
/// Deterministic: each structure draws from its own seed stream (derived
/// from the config seed, the stage, and the structure's fixed index), so
/// results do not depend on the order structures are listed in.
pub fn sample_queries(
    split: &GraphSplit,
    cfg: &SamplerConfig,
) -> Result<(Vec<QueryInstance>, SampleReport)> {
    let graph = split.graph(cfg.stage);
    let grounder = Grounder { graph, pool: graph.entities_with_incoming() };
    if grounder.pool.is_empty() {
        return Err(Error::Misuse("cannot sample queries: graph has no edges".into()));
    }

    let mut out = Vec::new();
    let mut structures = BTreeMap::new();
    let mut shortfall = Vec::new();
    for &s in &cfg.templates {
        let structure_index =
            StructureName::all().iter().position(|&x| x == s).expect("catalog structure") as u64;
        let mut rng = derive(cfg.seed, mix2(cfg.stage as u64, structure_index));
        let requested = cfg.requested(s);
        let budget = requested.saturating_mul(cfg.max_tries);
        let mut seen: BTreeSet<(Vec<EntityId>, Vec<RelationId>)> = BTreeSet::new();
        let mut kept = 0usize;
        let mut attempts = 0usize;
        while kept < requested && attempts < budget {
            attempts += 1;
            let Some((anchors, relations)) = grounder.ground(s, &mut rng) else {
                continue;
            };
            if !seen.insert((anchors.clone(), relations.clone())) {
                continue;
            }
            let tree = s.instantiate(&anchors, &relations)?;
            let [train, valid, test] = oracle::answer_sets(&tree, split)?;
            let stage_answers = match cfg.stage {
                Stage::Train => &train,
                Stage::Valid => &valid,
                Stage::Test => &test,
            };
            if stage_answers.is_empty() || stage_answers.len() > cfg.max_answers {
                continue;
            }
            let inst = QueryInstance {
                structure: s,
                anchors,
                relations,
                answers_train: train.iter().copied().collect(),
                answers_valid: valid.iter().copied().collect(),
                answers_test: test.iter().copied().collect(),
            };
            if cfg.stage != Stage::Train && inst.non_trivial_answers(cfg.stage).is_empty() {
                continue;
            }
            out.push(inst);
            kept += 1;
        }
        structures.insert(s.to_string(), StructureStats { requested, kept, attempts });
        if kept < requested {
            shortfall.push(s.to_string());
        }
    }
    let report = SampleReport { stage: cfg.stage, seed: cfg.seed, structures, shortfall };
    Ok((out, report))
}

struct Grounder<'a> {
    graph: &'a KnowledgeGraph,
    /// Entities with at least one incoming edge — the only possible targets.
    pool: Vec<EntityId>,
}

impl Grounder<'_> {
    fn ground(
        &self,
        s: StructureName,
        rng: &mut ChaCha20Rng,
    ) -> Option<(Vec<EntityId>, Vec<RelationId>)> {
        let (na, nr) = s.arity();
        let mut anchors: Vec<Option<EntityId>> = vec![None; na];
        let mut relations: Vec<Option<RelationId>> = vec![None; nr];
        let target = *self.pool.choose(rng).expect("non-empty pool");
        if !self.walk(&s.template(), target, rng, &mut anchors, &mut relations) {
            return None;
        }
        Some((
            anchors.into_iter().map(|a| a.expect("anchor placeholder filled")).collect(),
            relations.into_iter().map(|r| r.expect("relation placeholder filled")).collect(),
        ))
    }

    /// Walk a template subtree backwards so that `target` satisfies it,
    /// filling placeholder slots. Returns false when the graph offers no
    /// consistent assignment along the randomly chosen edges.
    fn walk(
        &self,
        node: &QueryTree,
        target: EntityId,
        rng: &mut ChaCha20Rng,
        anchors: &mut Vec<Option<EntityId>>,
        relations: &mut Vec<Option<RelationId>>,
    ) -> bool {
        match node {
            QueryTree::Anchor(ph) => {
                anchors[ph.0 as usize] = Some(target);
                true
            }
            QueryTree::Projection(r_ph, child) => {
                let incoming: Vec<(EntityId, RelationId)> = self.graph.incoming(target).collect();
                let Some(&(head, relation)) = incoming.choose(rng) else {
                    return false;
                };
                relations[r_ph.0 as usize] = Some(relation);
                self.walk(child, head, rng, anchors, relations)
            }
            QueryTree::Intersection(cs) => {
                cs.iter().all(|c| self.walk(c, target, rng, anchors, relations))
            }
            QueryTree::Union(cs) => {
                let carrier = rng.gen_range(0..cs.len());
                for (i, c) in cs.iter().enumerate() {
                    let t = if i == carrier { target } else { *self.pool.choose(rng).unwrap() };
                    if !self.walk(c, t, rng, anchors, relations) {
                        return false;
                    }
                }
                true
            }
            QueryTree::Negation(child) => {
                // The branch must be satisfiable by *something* (walk from a
                // decoy) while excluding the real target.
                for _ in 0..NEGATION_TRIES {
                    let snapshot = (anchors.clone(), relations.clone());
                    let decoy = *self.pool.choose(rng).unwrap();
                    if self.walk(child, decoy, rng, anchors, relations) {
                        let sub = concretize(child, anchors, relations);
                        let answers =
                            oracle::answer_set(&sub, self.graph).expect("grounded ids in range");
                        if !answers.contains(&target) {
                            return true;
                        }
                    }
                    *anchors = snapshot.0;
                    *relations = snapshot.1;
                }
                false
            }
        }
    }
}

/// Substitute the placeholders of a fully grounded subtree.
fn concretize(
    node: &QueryTree,
    anchors: &[Option<EntityId>],
    relations: &[Option<RelationId>],
) -> QueryTree {
    match node {
        QueryTree::Anchor(e) => {
            QueryTree::Anchor(anchors[e.0 as usize].expect("grounded anchor"))
        }
        QueryTree::Projection(r, c) => QueryTree::Projection(
            relations[r.0 as usize].expect("grounded relation"),
            Box::new(concretize(c, anchors, relations)),
        ),
        QueryTree::Negation(c) => QueryTree::Negation(Box::new(concretize(c, anchors, relations))),
        QueryTree::Intersection(cs) => {
            QueryTree::Intersection(cs.iter().map(|c| concretize(c, anchors, relations)).collect())
        }
        QueryTree::Union(cs) => {
            QueryTree::Union(cs.iter().map(|c| concretize(c, anchors, relations)).collect())
        }
    }
}

/// Draw `u` negatives uniformly without replacement from the complement of
/// `exclude` (sorted) in `0..n_entities`.
pub fn sample_negatives(
    n_entities: usize,
    exclude: &[EntityId],
    u: usize,
    structure: StructureName,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<EntityId>> {
    debug_assert!(exclude.windows(2).all(|w| w[0] < w[1]), "exclude must be sorted unique");
    let mut complement: Vec<EntityId> = Vec::with_capacity(n_entities - exclude.len().min(n_entities));
    let mut ex = exclude.iter().peekable();
    for id in 0..n_entities as u32 {
        let e = EntityId(id);
        if ex.peek() == Some(&&e) {
            ex.next();
        } else {
            complement.push(e);
        }
    }
    if complement.len() < u {
        return Err(Error::NotEnoughNegatives {
            structure,
            requested: u,
            available: complement.len(),
        });
    }
    // Partial Fisher–Yates: only the first u positions need shuffling.
    for j in 0..u {
        let k = rng.gen_range(j..complement.len());
        complement.swap(j, k);
    }
    complement.truncate(u);
    Ok(complement)
}
