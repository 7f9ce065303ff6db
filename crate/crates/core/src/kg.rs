//! Knowledge graphs and their train/valid/test splits.
//!
//! A split follows the standard incomplete-graph evaluation protocol: the
//! validation graph is the training graph plus held-out validation edges, and
//! the test graph adds a further set of held-out test edges, so
//! `train ⊆ valid ⊆ test` by construction. All three share one vocabulary
//! with dense integer ids assigned in first-appearance order.
//!
//! Only a forward adjacency index `(head, relation) -> tails` is kept; the
//! engine never projects backwards, and the query sampler makes do with
//! linear scans when it walks edges in reverse.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl std::fmt::Display for EntityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for RelationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Ordered set of entities; all answer-set algebra runs on these.
pub type EntitySet = BTreeSet<EntityId>;

/// String names behind the dense ids, shared by every graph of a split.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: HashMap<String, u32>,
    relation_ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn entity_id(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            return EntityId(id);
        }
        let id = self.entities.len() as u32;
        self.entities.push(name.to_string());
        self.entity_ids.insert(name.to_string(), id);
        EntityId(id)
    }

    pub fn relation_id(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_ids.get(name) {
            return RelationId(id);
        }
        let id = self.relations.len() as u32;
        self.relations.push(name.to_string());
        self.relation_ids.insert(name.to_string(), id);
        RelationId(id)
    }

    pub fn lookup_entity(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).map(|&id| EntityId(id))
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities[id.0 as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id.0 as usize]
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }
}

/// An edge-labelled directed graph with a forward adjacency index.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    n_entities: usize,
    n_relations: usize,
    /// Sorted, deduplicated.
    triples: Vec<Triple>,
    /// `(head, relation) -> sorted tails`; contains exactly the triple set.
    adjacency: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl KnowledgeGraph {
    pub fn from_triples(n_entities: usize, n_relations: usize, mut triples: Vec<Triple>) -> Result<Self> {
        for t in &triples {
            check_entity(t.head, n_entities)?;
            check_relation(t.relation, n_relations)?;
            check_entity(t.tail, n_entities)?;
        }
        triples.sort_unstable();
        triples.dedup();
        let mut adjacency: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        for t in &triples {
            adjacency.entry((t.head, t.relation)).or_default().push(t.tail);
        }
        // Triples are sorted, so each tail list arrives sorted and unique.
        Ok(KnowledgeGraph { n_entities, n_relations, triples, adjacency })
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn n_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.triples.binary_search(&Triple { head, relation, tail }).is_ok()
    }

    /// Tails reachable from `head` over `relation` (empty slice if none).
    pub fn neighbors(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.adjacency.get(&(head, relation)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Relational projection: all tails reachable from any source entity.
    pub fn project(&self, source: &EntitySet, relation: RelationId) -> Result<EntitySet> {
        check_relation(relation, self.n_relations)?;
        let mut out = EntitySet::new();
        for &e in source {
            check_entity(e, self.n_entities)?;
            out.extend(self.neighbors(e, relation).iter().copied());
        }
        Ok(out)
    }

    /// Complement against the full entity vocabulary.
    pub fn complement(&self, set: &EntitySet) -> EntitySet {
        (0..self.n_entities as u32)
            .map(EntityId)
            .filter(|e| !set.contains(e))
            .collect()
    }

    pub fn all_entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.n_entities as u32).map(EntityId)
    }

    /// Incoming edges of `tail` via linear scan (no reverse index is kept).
    pub fn incoming(&self, tail: EntityId) -> impl Iterator<Item = (EntityId, RelationId)> + '_ {
        self.triples
            .iter()
            .filter(move |t| t.tail == tail)
            .map(|t| (t.head, t.relation))
    }

    /// Entities with at least one incoming edge, sorted.
    pub fn entities_with_incoming(&self) -> Vec<EntityId> {
        let set: EntitySet = self.triples.iter().map(|t| t.tail).collect();
        set.into_iter().collect()
    }
}

fn check_entity(e: EntityId, n: usize) -> Result<()> {
    if (e.0 as usize) < n {
        Ok(())
    } else {
        Err(Error::UnknownId { kind: "entity", id: e.0, size: n })
    }
}

fn check_relation(r: RelationId, n: usize) -> Result<()> {
    if (r.0 as usize) < n {
        Ok(())
    } else {
        Err(Error::UnknownId { kind: "relation", id: r.0, size: n })
    }
}

/// The three nested evaluation graphs plus their shared vocabulary.
#[derive(Debug, Clone)]
pub struct GraphSplit {
    pub vocab: Vocabulary,
    pub train: KnowledgeGraph,
    pub valid: KnowledgeGraph,
    pub test: KnowledgeGraph,
}

impl GraphSplit {
    pub fn graph(&self, stage: Stage) -> &KnowledgeGraph {
        match stage {
            Stage::Train => &self.train,
            Stage::Valid => &self.valid,
            Stage::Test => &self.test,
        }
    }
}

/// Which graph of the split an operation runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Stage::Train),
            "valid" => Ok(Stage::Valid),
            "test" => Ok(Stage::Test),
            other => Err(format!("unknown stage '{other}' (expected train|valid|test)")),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Train => "train",
            Stage::Valid => "valid",
            Stage::Test => "test",
        })
    }
}

/// Per-file row statistics gathered while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Summary of one `load_split` run, serializable as a single JSON object.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadReport {
    pub entities: usize,
    pub relations: usize,
    /// Rows read per file (excluding blank lines).
    pub rows: SplitCounts,
    /// Rows that repeated a triple already present in the graph being built.
    pub duplicates: SplitCounts,
    /// Distinct triples per graph (cumulative: valid includes train, ...).
    pub triples: SplitCounts,
}

/// Load a split from three TSV files (`head <TAB> relation <TAB> tail`).
///
/// The validation and test files contain only their held-out edges; the
/// graphs are accumulated so the subset chain holds by construction. Ids are
/// assigned in first-appearance order (train file first).
pub fn load_split(
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
) -> Result<(GraphSplit, LoadReport)> {
    let mut vocab = Vocabulary::default();
    let mut triples: Vec<Triple> = Vec::new();
    let mut seen: BTreeSet<Triple> = BTreeSet::new();
    let mut rows = SplitCounts::default();
    let mut duplicates = SplitCounts::default();
    let mut cumulative = SplitCounts::default();
    let mut graphs: Vec<KnowledgeGraph> = Vec::with_capacity(3);

    for (path, rows_slot, dup_slot, cum_slot) in [
        (train_path, 0usize, 0usize, 0usize),
        (valid_path, 1, 1, 1),
        (test_path, 2, 2, 2),
    ] {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (h, r, t) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                    (h, r, t)
                }
                _ => {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        format!("expected 'head<TAB>relation<TAB>tail', got {line:?}"),
                    ))
                }
            };
            *pick_mut(&mut rows, rows_slot) += 1;
            let triple = Triple {
                head: vocab.entity_id(h),
                relation: vocab.relation_id(r),
                tail: vocab.entity_id(t),
            };
            if seen.insert(triple) {
                triples.push(triple);
            } else {
                *pick_mut(&mut duplicates, dup_slot) += 1;
            }
        }
        *pick_mut(&mut cumulative, cum_slot) = seen.len();
        graphs.push(KnowledgeGraph::from_triples(
            vocab.n_entities(),
            vocab.n_relations(),
            triples.clone(),
        )?);
    }

    let test = graphs.pop().unwrap();
    let valid = graphs.pop().unwrap();
    let train = graphs.pop().unwrap();
    // Earlier graphs were built before the vocabulary was complete; rebuild
    // them against the final vocabulary size so ids mean the same everywhere.
    let train = KnowledgeGraph::from_triples(
        vocab.n_entities(),
        vocab.n_relations(),
        train.triples.clone(),
    )?;
    let valid = KnowledgeGraph::from_triples(
        vocab.n_entities(),
        vocab.n_relations(),
        valid.triples.clone(),
    )?;

    let report = LoadReport {
        entities: vocab.n_entities(),
        relations: vocab.n_relations(),
        rows,
        duplicates,
        triples: cumulative,
    };
    Ok((GraphSplit { vocab, train, valid, test }, report))
}

fn pick_mut(c: &mut SplitCounts, slot: usize) -> &mut usize {
    match slot {
        0 => &mut c.train,
        1 => &mut c.valid,
        _ => &mut c.test,
    }
}

// ---------------------------------------------------------------------------
// Serialized split directories (what `ingest` writes and later stages read).
// ---------------------------------------------------------------------------

const ENTITIES_FILE: &str = "entities.tsv";
const RELATIONS_FILE: &str = "relations.tsv";
const TRAIN_FILE: &str = "train.tsv";
const VALID_FILE: &str = "valid.tsv";
const TEST_FILE: &str = "test.tsv";
pub const REPORT_FILE: &str = "report.json";

/// Write a loaded split to a directory: vocabulary files (line number = id),
/// per-stage id triples (valid/test hold only their delta edges), and the
/// load report as JSON.
pub fn write_split_dir(dir: &Path, split: &GraphSplit, report: &LoadReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write_lines = |file: &str, lines: &[String]| -> Result<()> {
        let path = dir.join(file);
        let mut out = String::new();
        for l in lines {
            out.push_str(l);
            out.push('\n');
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    };
    write_lines(ENTITIES_FILE, split.vocab.entity_names())?;
    write_lines(RELATIONS_FILE, split.vocab.relation_names())?;

    let train_set: BTreeSet<Triple> = split.train.triples().iter().copied().collect();
    let valid_set: BTreeSet<Triple> = split.valid.triples().iter().copied().collect();
    let fmt = |ts: &[Triple], filter: &BTreeSet<Triple>| -> Vec<String> {
        ts.iter()
            .filter(|t| !filter.contains(t))
            .map(|t| format!("{}\t{}\t{}", t.head, t.relation, t.tail))
            .collect()
    };
    write_lines(TRAIN_FILE, &fmt(split.train.triples(), &BTreeSet::new()))?;
    write_lines(VALID_FILE, &fmt(split.valid.triples(), &train_set))?;
    write_lines(TEST_FILE, &fmt(split.test.triples(), &valid_set))?;

    let path = dir.join(REPORT_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    writeln!(f, "{json}").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Read a directory produced by [`write_split_dir`].
pub fn read_split_dir(dir: &Path) -> Result<GraphSplit> {
    let read_lines = |file: &str| -> Result<Vec<String>> {
        let path = dir.join(file);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(text.lines().map(str::to_string).collect())
    };
    let mut vocab = Vocabulary::default();
    for name in read_lines(ENTITIES_FILE)? {
        vocab.entity_id(&name);
    }
    for name in read_lines(RELATIONS_FILE)? {
        vocab.relation_id(&name);
    }

    let parse_ids = |file: &str| -> Result<Vec<Triple>> {
        let path = dir.join(file);
        read_lines(file)?
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| {
                let parts: Vec<&str> = l.split('\t').collect();
                let parse = |s: &str| -> Result<u32> {
                    s.parse().map_err(|_| Error::parse(&path, i + 1, format!("bad id {s:?}")))
                };
                match parts.as_slice() {
                    [h, r, t] => Ok(Triple {
                        head: EntityId(parse(h)?),
                        relation: RelationId(parse(r)?),
                        tail: EntityId(parse(t)?),
                    }),
                    _ => Err(Error::parse(&path, i + 1, format!("expected 3 id fields, got {l:?}"))),
                }
            })
            .collect()
    };

    let train_triples = parse_ids(TRAIN_FILE)?;
    let mut valid_triples = train_triples.clone();
    valid_triples.extend(parse_ids(VALID_FILE)?);
    let mut test_triples = valid_triples.clone();
    test_triples.extend(parse_ids(TEST_FILE)?);

    let (ne, nr) = (vocab.n_entities(), vocab.n_relations());
    Ok(GraphSplit {
        vocab,
        train: KnowledgeGraph::from_triples(ne, nr, train_triples)?,
        valid: KnowledgeGraph::from_triples(ne, nr, valid_triples)?,
        test: KnowledgeGraph::from_triples(ne, nr, test_triples)?,
    })
}
