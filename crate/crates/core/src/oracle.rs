//! Exact query answering by set algebra over a knowledge graph.
//!
//! Two routes produce the same answers: [`answer_set`] interprets the query
//! tree directly (unions included), while [`execute_plan`] runs a decomposed
//! plan the way the neural executor does — path steps and pairwise forks
//! over slots, one plan per disjunct. Their agreement is what certifies the
//! decomposer, so both are kept deliberately simple.

use crate::error::{Error, Result};
use crate::kg::{EntitySet, GraphSplit, KnowledgeGraph, Stage};
use crate::query::{DecompositionPlan, PathOp, PathStart, PlanStep, QueryTree};

/// Answers of `tree` on `graph`, by direct recursive evaluation.
pub fn answer_set(tree: &QueryTree, graph: &KnowledgeGraph) -> Result<EntitySet> {
    match tree {
        QueryTree::Anchor(e) => {
            if (e.0 as usize) >= graph.n_entities() {
                return Err(Error::UnknownId { kind: "entity", id: e.0, size: graph.n_entities() });
            }
            Ok([*e].into_iter().collect())
        }
        QueryTree::Projection(r, c) => graph.project(&answer_set(c, graph)?, *r),
        QueryTree::Negation(c) => Ok(graph.complement(&answer_set(c, graph)?)),
        QueryTree::Intersection(cs) => {
            let mut sets = cs.iter().map(|c| answer_set(c, graph));
            let mut acc = sets.next().expect("validated intersection has branches")?;
            for s in sets {
                let s = s?;
                acc.retain(|e| s.contains(e));
            }
            Ok(acc)
        }
        QueryTree::Union(cs) => {
            let mut acc = EntitySet::new();
            for c in cs {
                acc.extend(answer_set(c, graph)?);
            }
            Ok(acc)
        }
    }
}

/// Run one decomposed disjunct symbolically: each slot holds the entity set
/// produced by its step.
pub fn execute_plan(plan: &DecompositionPlan, graph: &KnowledgeGraph) -> Result<EntitySet> {
    let mut slots: Vec<EntitySet> = Vec::with_capacity(plan.steps.len());
    for step in &plan.steps {
        let set = match step {
            PlanStep::Path(p) => {
                let mut cur: EntitySet = match p.start {
                    PathStart::Anchor(e) => {
                        if (e.0 as usize) >= graph.n_entities() {
                            return Err(Error::UnknownId {
                                kind: "entity",
                                id: e.0,
                                size: graph.n_entities(),
                            });
                        }
                        [e].into_iter().collect()
                    }
                    PathStart::Fork(slot) => slots[slot].clone(),
                };
                for op in &p.ops {
                    cur = match op {
                        PathOp::Project(r) => graph.project(&cur, *r)?,
                        PathOp::Negate => graph.complement(&cur),
                    };
                }
                cur
            }
            PlanStep::Fork { left, right } => {
                let mut acc = slots[*left].clone();
                let r = &slots[*right];
                acc.retain(|e| r.contains(e));
                acc
            }
        };
        slots.push(set);
    }
    Ok(slots.pop().expect("plan has at least one step"))
}

/// Answers via decomposition: the union of every disjunct's plan output.
/// Must coincide with [`answer_set`]; exists to certify the decomposer.
pub fn answer_set_via_plans(tree: &QueryTree, graph: &KnowledgeGraph) -> Result<EntitySet> {
    let mut acc = EntitySet::new();
    for plan in tree.decompose()? {
        acc.extend(execute_plan(&plan, graph)?);
    }
    Ok(acc)
}

/// Answers on every graph of the split, in stage order.
pub fn answer_sets(tree: &QueryTree, split: &GraphSplit) -> Result<[EntitySet; 3]> {
    Ok([
        answer_set(tree, split.graph(Stage::Train))?,
        answer_set(tree, split.graph(Stage::Valid))?,
        answer_set(tree, split.graph(Stage::Test))?,
    ])
}
