//! Existential first-order queries as computation trees.
//!
//! A query is a tree whose leaves are anchor entities and whose internal
//! nodes apply relational projection, complement (negation), intersection,
//! or union. The engine answers a query by decomposing it into *path
//! queries* (an anchor or an intersection output, followed by a sequence of
//! projection/negation operators) joined at *fork* nodes where intersection
//! branches meet. Unions never reach the decomposer: queries are first
//! rewritten into disjunctive normal form and each disjunct is handled
//! independently.
//!
//! Fourteen named structures cover the benchmark query families. Each is a
//! template over placeholder ids; [`StructureName::instantiate`] substitutes
//! concrete anchors (in left-to-right leaf order) and relations (in
//! post-order, i.e. the order the operators are applied).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId, Stage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryTree {
    Anchor(EntityId),
    Projection(RelationId, Box<QueryTree>),
    Negation(Box<QueryTree>),
    Intersection(Vec<QueryTree>),
    Union(Vec<QueryTree>),
}

impl QueryTree {
    pub fn anchor(e: u32) -> QueryTree {
        QueryTree::Anchor(EntityId(e))
    }

    pub fn project(r: u32, child: QueryTree) -> QueryTree {
        QueryTree::Projection(RelationId(r), Box::new(child))
    }

    pub fn negate(child: QueryTree) -> QueryTree {
        QueryTree::Negation(Box::new(child))
    }

    /// Anchors in left-to-right leaf order.
    pub fn anchors(&self) -> Vec<EntityId> {
        let mut out = Vec::new();
        self.walk_anchors(&mut out);
        out
    }

    fn walk_anchors(&self, out: &mut Vec<EntityId>) {
        match self {
            QueryTree::Anchor(e) => out.push(*e),
            QueryTree::Projection(_, c) | QueryTree::Negation(c) => c.walk_anchors(out),
            QueryTree::Intersection(cs) | QueryTree::Union(cs) => {
                for c in cs {
                    c.walk_anchors(out);
                }
            }
        }
    }

    /// Relations in post-order: the order the projections are applied.
    pub fn relations(&self) -> Vec<RelationId> {
        let mut out = Vec::new();
        self.walk_relations(&mut out);
        out
    }

    fn walk_relations(&self, out: &mut Vec<RelationId>) {
        match self {
            QueryTree::Anchor(_) => {}
            QueryTree::Projection(r, c) => {
                c.walk_relations(out);
                out.push(*r);
            }
            QueryTree::Negation(c) => c.walk_relations(out),
            QueryTree::Intersection(cs) | QueryTree::Union(cs) => {
                for c in cs {
                    c.walk_relations(out);
                }
            }
        }
    }

    /// Structural well-formedness. Rejects shapes the engine cannot encode:
    /// variadic nodes below arity two, anchors that do not feed a
    /// projection, negation of anything but a projection chain, and unions
    /// in the scope of a negation (their complement is not a disjunction of
    /// this fragment).
    pub fn validate(&self) -> Result<()> {
        self.validate_inner(false)
    }

    fn validate_inner(&self, under_negation: bool) -> Result<()> {
        match self {
            QueryTree::Anchor(_) => Err(Error::UnsupportedStructure(
                "anchor must feed a projection".into(),
            )),
            QueryTree::Projection(_, c) => match c.as_ref() {
                QueryTree::Anchor(_) => Ok(()),
                other => other.validate_inner(under_negation),
            },
            QueryTree::Negation(c) => match c.as_ref() {
                QueryTree::Projection(..) => c.validate_inner(true),
                QueryTree::Negation(_) => {
                    Err(Error::UnsupportedStructure("double negation".into()))
                }
                _ => Err(Error::UnsupportedStructure(
                    "negation must wrap a projection chain".into(),
                )),
            },
            QueryTree::Intersection(cs) => {
                if cs.len() < 2 {
                    return Err(Error::UnsupportedStructure(format!(
                        "intersection of {} branch(es)",
                        cs.len()
                    )));
                }
                cs.iter().try_for_each(|c| c.validate_inner(under_negation))
            }
            QueryTree::Union(cs) => {
                if under_negation {
                    return Err(Error::UnsupportedStructure("union beneath negation".into()));
                }
                if cs.len() < 2 {
                    return Err(Error::UnsupportedStructure(format!(
                        "union of {} branch(es)",
                        cs.len()
                    )));
                }
                cs.iter().try_for_each(|c| c.validate_inner(under_negation))
            }
        }
    }

    /// Rewrite into disjunctive normal form: a list of union-free disjuncts
    /// whose union is equivalent to the query. Projections distribute over
    /// union; intersections take the cross product of their branches.
    pub fn to_dnf(&self) -> Result<Vec<QueryTree>> {
        match self {
            QueryTree::Anchor(e) => Ok(vec![QueryTree::Anchor(*e)]),
            QueryTree::Projection(r, c) => Ok(c
                .to_dnf()?
                .into_iter()
                .map(|d| QueryTree::Projection(*r, Box::new(d)))
                .collect()),
            QueryTree::Negation(c) => {
                let ds = c.to_dnf()?;
                if ds.len() != 1 {
                    return Err(Error::UnsupportedStructure("union beneath negation".into()));
                }
                Ok(vec![QueryTree::Negation(Box::new(ds.into_iter().next().unwrap()))])
            }
            QueryTree::Intersection(cs) => {
                let mut acc: Vec<Vec<QueryTree>> = vec![Vec::new()];
                for c in cs {
                    let ds = c.to_dnf()?;
                    let mut next = Vec::with_capacity(acc.len() * ds.len());
                    for partial in &acc {
                        for d in &ds {
                            let mut branch = partial.clone();
                            branch.push(d.clone());
                            next.push(branch);
                        }
                    }
                    acc = next;
                }
                Ok(acc.into_iter().map(QueryTree::Intersection).collect())
            }
            QueryTree::Union(cs) => {
                let mut out = Vec::new();
                for c in cs {
                    out.extend(c.to_dnf()?);
                }
                Ok(out)
            }
        }
    }

    /// Validate, normalize, and decompose into one execution plan per
    /// disjunct.
    pub fn decompose(&self) -> Result<Vec<DecompositionPlan>> {
        self.validate()?;
        self.to_dnf()?.iter().map(DecompositionPlan::build).collect()
    }
}

// ---------------------------------------------------------------------------
// Decomposition plans
// ---------------------------------------------------------------------------

/// Index of a step's output within a plan (step `i` fills slot `i`).
pub type SlotId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStart {
    Anchor(EntityId),
    Fork(SlotId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathOp {
    Project(RelationId),
    Negate,
}

/// A start point followed by at least one operator; the first operator is
/// always a projection (negation modifies a projection, it never leads).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathQuery {
    pub start: PathStart,
    pub ops: Vec<PathOp>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanStep {
    Path(PathQuery),
    Fork { left: SlotId, right: SlotId },
}

/// Steps in dependency order for one union-free disjunct; the last step
/// produces the query representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionPlan {
    pub steps: Vec<PlanStep>,
}

impl DecompositionPlan {
    pub fn root_slot(&self) -> SlotId {
        self.steps.len() - 1
    }

    pub fn n_paths(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, PlanStep::Path(_))).count()
    }

    pub fn n_forks(&self) -> usize {
        self.steps.len() - self.n_paths()
    }

    fn build(disjunct: &QueryTree) -> Result<DecompositionPlan> {
        let mut steps = Vec::new();
        emit(disjunct, &mut steps)?;
        Ok(DecompositionPlan { steps })
    }
}

fn emit(node: &QueryTree, steps: &mut Vec<PlanStep>) -> Result<SlotId> {
    match node {
        QueryTree::Projection(..) | QueryTree::Negation(_) => {
            // Collect the operator chain down to its base.
            let mut ops_rev = Vec::new();
            let mut cur = node;
            loop {
                match cur {
                    QueryTree::Projection(r, c) => {
                        ops_rev.push(PathOp::Project(*r));
                        cur = c;
                    }
                    QueryTree::Negation(c) => {
                        ops_rev.push(PathOp::Negate);
                        cur = c;
                    }
                    _ => break,
                }
            }
            let start = match cur {
                QueryTree::Anchor(e) => PathStart::Anchor(*e),
                QueryTree::Intersection(cs) => PathStart::Fork(emit_intersection(cs, steps)?),
                _ => {
                    return Err(Error::UnsupportedStructure(
                        "union survived normal-form rewrite".into(),
                    ))
                }
            };
            ops_rev.reverse();
            if !matches!(ops_rev.first(), Some(PathOp::Project(_))) {
                return Err(Error::UnsupportedStructure(
                    "path must begin with a projection".into(),
                ));
            }
            steps.push(PlanStep::Path(PathQuery { start, ops: ops_rev }));
            Ok(steps.len() - 1)
        }
        QueryTree::Intersection(cs) => emit_intersection(cs, steps),
        QueryTree::Anchor(_) => Err(Error::UnsupportedStructure(
            "anchor must feed a projection".into(),
        )),
        QueryTree::Union(_) => Err(Error::UnsupportedStructure(
            "union survived normal-form rewrite".into(),
        )),
    }
}

/// Emit every branch, then join them with a left-associated chain of
/// pairwise forks.
fn emit_intersection(branches: &[QueryTree], steps: &mut Vec<PlanStep>) -> Result<SlotId> {
    let slots: Vec<SlotId> = branches
        .iter()
        .map(|b| emit(b, steps))
        .collect::<Result<_>>()?;
    let mut acc = slots[0];
    for &s in &slots[1..] {
        steps.push(PlanStep::Fork { left: acc, right: s });
        acc = steps.len() - 1;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Named structures
// ---------------------------------------------------------------------------

/// The fourteen benchmark query structures. The first nine are existential
/// positive (projection/intersection/union only); the last five add negated
/// branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StructureName {
    #[serde(rename = "1p")]
    OneP,
    #[serde(rename = "2p")]
    TwoP,
    #[serde(rename = "3p")]
    ThreeP,
    #[serde(rename = "2i")]
    TwoI,
    #[serde(rename = "3i")]
    ThreeI,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "2u")]
    TwoU,
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "2in")]
    TwoIn,
    #[serde(rename = "3in")]
    ThreeIn,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "pni")]
    Pni,
}

impl StructureName {
    pub fn all() -> [StructureName; 14] {
        use StructureName::*;
        [OneP, TwoP, ThreeP, TwoI, ThreeI, Ip, Pi, TwoU, Up, TwoIn, ThreeIn, Inp, Pin, Pni]
    }

    /// The nine structures without negation, in reporting order.
    pub fn epfo() -> [StructureName; 9] {
        use StructureName::*;
        [OneP, TwoP, ThreeP, TwoI, ThreeI, Ip, Pi, TwoU, Up]
    }

    /// The five structures with a negated branch, in reporting order.
    pub fn negation() -> [StructureName; 5] {
        use StructureName::*;
        [TwoIn, ThreeIn, Inp, Pin, Pni]
    }

    pub fn has_negation(self) -> bool {
        matches!(
            self,
            StructureName::TwoIn
                | StructureName::ThreeIn
                | StructureName::Inp
                | StructureName::Pin
                | StructureName::Pni
        )
    }

    /// `(anchors, relations)` the template expects.
    pub fn arity(self) -> (usize, usize) {
        use StructureName::*;
        match self {
            OneP => (1, 1),
            TwoP => (1, 2),
            ThreeP => (1, 3),
            TwoI | TwoU | TwoIn => (2, 2),
            ThreeI | ThreeIn => (3, 3),
            Ip | Pi | Up | Inp | Pin | Pni => (2, 3),
        }
    }

    /// Template over placeholder ids: anchor `k` is `EntityId(k)` in leaf
    /// order, relation `k` is `RelationId(k)` in post-order.
    pub fn template(self) -> QueryTree {
        use QueryTree as T;
        use StructureName::*;
        match self {
            OneP => T::project(0, T::anchor(0)),
            TwoP => T::project(1, T::project(0, T::anchor(0))),
            ThreeP => T::project(2, T::project(1, T::project(0, T::anchor(0)))),
            TwoI => T::Intersection(vec![
                T::project(0, T::anchor(0)),
                T::project(1, T::anchor(1)),
            ]),
            ThreeI => T::Intersection(vec![
                T::project(0, T::anchor(0)),
                T::project(1, T::anchor(1)),
                T::project(2, T::anchor(2)),
            ]),
            Ip => T::project(
                2,
                T::Intersection(vec![
                    T::project(0, T::anchor(0)),
                    T::project(1, T::anchor(1)),
                ]),
            ),
            Pi => T::Intersection(vec![
                T::project(1, T::project(0, T::anchor(0))),
                T::project(2, T::anchor(1)),
            ]),
            TwoU => T::Union(vec![
                T::project(0, T::anchor(0)),
                T::project(1, T::anchor(1)),
            ]),
            Up => T::project(
                2,
                T::Union(vec![
                    T::project(0, T::anchor(0)),
                    T::project(1, T::anchor(1)),
                ]),
            ),
            TwoIn => T::Intersection(vec![
                T::project(0, T::anchor(0)),
                T::negate(T::project(1, T::anchor(1))),
            ]),
            ThreeIn => T::Intersection(vec![
                T::project(0, T::anchor(0)),
                T::project(1, T::anchor(1)),
                T::negate(T::project(2, T::anchor(2))),
            ]),
            Inp => T::project(
                2,
                T::Intersection(vec![
                    T::project(0, T::anchor(0)),
                    T::negate(T::project(1, T::anchor(1))),
                ]),
            ),
            Pin => T::Intersection(vec![
                T::project(1, T::project(0, T::anchor(0))),
                T::negate(T::project(2, T::anchor(1))),
            ]),
            Pni => T::Intersection(vec![
                T::negate(T::project(1, T::project(0, T::anchor(0)))),
                T::project(2, T::anchor(1)),
            ]),
        }
    }

    /// Substitute concrete ids into the template. `anchors` follows
    /// left-to-right leaf order, `relations` post-order.
    pub fn instantiate(self, anchors: &[EntityId], relations: &[RelationId]) -> Result<QueryTree> {
        let (na, nr) = self.arity();
        if anchors.len() != na || relations.len() != nr {
            return Err(Error::Arity {
                template: self,
                expected_anchors: na,
                expected_relations: nr,
                got_anchors: anchors.len(),
                got_relations: relations.len(),
            });
        }
        Ok(substitute(&self.template(), anchors, relations))
    }
}

/// Placeholder ids double as indices into the substitution tables.
fn substitute(node: &QueryTree, anchors: &[EntityId], relations: &[RelationId]) -> QueryTree {
    match node {
        QueryTree::Anchor(e) => QueryTree::Anchor(anchors[e.0 as usize]),
        QueryTree::Projection(r, c) => QueryTree::Projection(
            relations[r.0 as usize],
            Box::new(substitute(c, anchors, relations)),
        ),
        QueryTree::Negation(c) => QueryTree::Negation(Box::new(substitute(c, anchors, relations))),
        QueryTree::Intersection(cs) => {
            QueryTree::Intersection(cs.iter().map(|c| substitute(c, anchors, relations)).collect())
        }
        QueryTree::Union(cs) => {
            QueryTree::Union(cs.iter().map(|c| substitute(c, anchors, relations)).collect())
        }
    }
}

impl std::fmt::Display for StructureName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use StructureName::*;
        f.write_str(match self {
            OneP => "1p",
            TwoP => "2p",
            ThreeP => "3p",
            TwoI => "2i",
            ThreeI => "3i",
            Ip => "ip",
            Pi => "pi",
            TwoU => "2u",
            Up => "up",
            TwoIn => "2in",
            ThreeIn => "3in",
            Inp => "inp",
            Pin => "pin",
            Pni => "pni",
        })
    }
}

impl std::str::FromStr for StructureName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        use StructureName::*;
        Ok(match s {
            "1p" => OneP,
            "2p" => TwoP,
            "3p" => ThreeP,
            "2i" => TwoI,
            "3i" => ThreeI,
            "ip" => Ip,
            "pi" => Pi,
            "2u" => TwoU,
            "up" => Up,
            "2in" => TwoIn,
            "3in" => ThreeIn,
            "inp" => Inp,
            "pin" => Pin,
            "pni" => Pni,
            other => return Err(format!("unknown query structure '{other}'")),
        })
    }
}

// ---------------------------------------------------------------------------
// Grounded instances and their on-disk form
// ---------------------------------------------------------------------------

/// A grounded query plus its answer sets on each graph of the split.
/// Answers are stored sorted; the non-trivial sets used for evaluation are
/// derived by subtraction (valid − train answers, test − valid answers).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub structure: StructureName,
    pub anchors: Vec<EntityId>,
    pub relations: Vec<RelationId>,
    pub answers_train: Vec<EntityId>,
    pub answers_valid: Vec<EntityId>,
    pub answers_test: Vec<EntityId>,
}

impl QueryInstance {
    pub fn tree(&self) -> Result<QueryTree> {
        self.structure.instantiate(&self.anchors, &self.relations)
    }

    /// Answers that require generalization at `stage`: they hold on that
    /// stage's graph but not on the previous one. At the train stage every
    /// answer is returned.
    pub fn non_trivial_answers(&self, stage: Stage) -> Vec<EntityId> {
        match stage {
            Stage::Train => self.answers_train.clone(),
            Stage::Valid => subtract_sorted(&self.answers_valid, &self.answers_train),
            Stage::Test => subtract_sorted(&self.answers_test, &self.answers_valid),
        }
    }

    /// All answers on the graph of `stage` (used for filtered ranking).
    pub fn answers(&self, stage: Stage) -> &[EntityId] {
        match stage {
            Stage::Train => &self.answers_train,
            Stage::Valid => &self.answers_valid,
            Stage::Test => &self.answers_test,
        }
    }
}

fn subtract_sorted(a: &[EntityId], b: &[EntityId]) -> Vec<EntityId> {
    a.iter().filter(|e| b.binary_search(e).is_err()).copied().collect()
}

/// First line of a query file: provenance needed to interpret the
/// instances (and to reproduce them).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFileMeta {
    pub kind: String,
    pub seed: u64,
    pub stage: Stage,
    /// Instances retained per structure.
    pub counts: BTreeMap<String, usize>,
}

pub const QUERY_FILE_KIND: &str = "query-set";

/// Write a query set as JSON lines: one meta object, then one instance per
/// line, in the given order.
pub fn write_query_file(path: &Path, meta: &QueryFileMeta, instances: &[QueryInstance]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(meta).expect("meta serializes");
    line.push('\n');
    for inst in instances {
        line.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        line.push('\n');
    }
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_query_file(path: &Path) -> Result<(QueryFileMeta, Vec<QueryInstance>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty query file".to_string()))?;
    let meta: QueryFileMeta = serde_json::from_str(first)
        .map_err(|e| Error::parse(path, 1, format!("bad meta line: {e}")))?;
    if meta.kind != QUERY_FILE_KIND {
        return Err(Error::parse(
            path,
            1,
            format!("expected kind {QUERY_FILE_KIND:?}, got {:?}", meta.kind),
        ));
    }
    let mut instances = Vec::new();
    for (i, line) in lines {
        let inst: QueryInstance = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, i + 1, format!("bad instance: {e}")))?;
        instances.push(inst);
    }
    Ok((meta, instances))
}
