//! Helpers shared by the integration suites: an independent brute-force
//! answer oracle, random graph/grounding generators, and fixture loaders.

use std::collections::HashMap;
use std::path::PathBuf;

use pathformer_core::kg::{
    load_split, EntityId, EntitySet, GraphSplit, KnowledgeGraph, RelationId, Triple,
};
use pathformer_core::query::{QueryTree, StructureName};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Brute-force answer set by existential-assignment enumeration: candidate
/// `a` answers the query iff the satisfaction relation below holds. Each
/// check scans the raw triple list directly, so this shares no code with
/// the production oracle's set algebra or adjacency index.
pub fn brute_force_answers(tree: &QueryTree, graph: &KnowledgeGraph) -> EntitySet {
    let mut memo = HashMap::new();
    (0..graph.n_entities() as u32)
        .map(EntityId)
        .filter(|&a| satisfies(tree, a, graph, &mut memo))
        .collect()
}

/// `satisfies(node, a)` = "there is an assignment of the existential
/// variables under which `a` is produced by `node`". Memoized on (node
/// address, candidate) — node addresses are stable for the duration of one
/// `brute_force_answers` call.
fn satisfies(
    node: &QueryTree,
    a: EntityId,
    graph: &KnowledgeGraph,
    memo: &mut HashMap<(usize, EntityId), bool>,
) -> bool {
    let key = (node as *const QueryTree as usize, a);
    if let Some(&hit) = memo.get(&key) {
        return hit;
    }
    let out = match node {
        QueryTree::Anchor(e) => *e == a,
        QueryTree::Projection(r, child) => graph
            .triples()
            .iter()
            .any(|t| t.relation == *r && t.tail == a && satisfies(child, t.head, graph, memo)),
        QueryTree::Negation(child) => !satisfies(child, a, graph, memo),
        QueryTree::Intersection(children) => {
            children.iter().all(|c| satisfies(c, a, graph, memo))
        }
        QueryTree::Union(children) => children.iter().any(|c| satisfies(c, a, graph, memo)),
    };
    memo.insert(key, out);
    out
}

/// Random multigraph with exactly `n_triples` distinct edges.
pub fn random_graph(
    rng: &mut ChaCha20Rng,
    n_entities: usize,
    n_relations: usize,
    n_triples: usize,
) -> KnowledgeGraph {
    let mut seen = std::collections::BTreeSet::new();
    while seen.len() < n_triples {
        seen.insert(Triple {
            head: EntityId(rng.gen_range(0..n_entities as u32)),
            relation: RelationId(rng.gen_range(0..n_relations as u32)),
            tail: EntityId(rng.gen_range(0..n_entities as u32)),
        });
    }
    KnowledgeGraph::from_triples(n_entities, n_relations, seen.into_iter().collect())
        .expect("random triples are in range")
}

/// Uniform anchors/relations for `structure` (unconstrained: equivalence
/// must hold on arbitrary groundings, including empty-answer ones).
pub fn random_grounding(
    structure: StructureName,
    n_entities: usize,
    n_relations: usize,
    rng: &mut ChaCha20Rng,
) -> (Vec<EntityId>, Vec<RelationId>) {
    let (na, nr) = structure.arity();
    let anchors = (0..na).map(|_| EntityId(rng.gen_range(0..n_entities as u32))).collect();
    let relations = (0..nr).map(|_| RelationId(rng.gen_range(0..n_relations as u32))).collect();
    (anchors, relations)
}

/// Load one of the committed fixture splits (`tiny6`, `toy30`).
pub fn fixture_split(name: &str) -> GraphSplit {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    let (split, _) = load_split(&dir.join("train.tsv"), &dir.join("valid.tsv"), &dir.join("test.tsv"))
        .expect("fixture split loads");
    split
}

/// Mid-rank by explicit sort: rank of element `i` = 1 + (number strictly
/// closer) + half the ties with other elements (the sort-position average
/// over the tie block). Independent of the streaming comparison used in
/// production.
pub fn rank_by_sort(dists: &[f64], i: usize) -> f64 {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap());
    let lo = order.iter().position(|&k| dists[k] == dists[i]).unwrap();
    let hi = order.iter().rposition(|&k| dists[k] == dists[i]).unwrap();
    // Average of the 1-based positions lo+1 ..= hi+1.
    (lo + hi) as f64 / 2.0 + 1.0
}
