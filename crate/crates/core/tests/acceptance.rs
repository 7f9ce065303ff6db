//! Acceptance gate: ten end-to-end checks, one per shipped guarantee.
//!
//! Run with
//! `cargo test -p pathformer-core --test acceptance -- --nocapture`
//! to see one `[PASS]` line per criterion (a failed criterion fails its
//! test, so a green run is the full gate).

mod common;

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::time::Instant;

use once_cell::sync::Lazy;
use pathformer_core::eval::{self, rank_among};
use pathformer_core::gradcheck::{full_suite, run_full_suite};
use pathformer_core::kg::{EntityId, EntitySet, GraphSplit, RelationId, Stage};
use pathformer_core::model::distance::min_l1;
use pathformer_core::model::loss::margin_loss;
use pathformer_core::model::{load_checkpoint, ModelConfig, PathformerModel};
use pathformer_core::oracle::{answer_set, execute_plan};
use pathformer_core::query::{PathOp, PlanStep, QueryInstance, StructureName};
use pathformer_core::sampler::{sample_queries, SamplerConfig};
use pathformer_core::train::{train, TrainConfig};
use pathformer_nn::gradcheck::{FD_STEP, FD_TOL};
use pathformer_nn::{
    mean_pool, EncoderConfig, MaskMode, ParameterStore, Pass, PositionalEncoding, Tensor,
    TransformerEncoder,
};
use rand::Rng;

// ---------------------------------------------------------------- fixtures

/// Steps for the overfit run (criterion 5). Calibrated on the committed
/// toy fixture; the criterion's budget is 5000.
const OVERFIT_STEPS: u64 = 3000;

/// One trained model on the toy fixture, shared by criteria 5, 6 and 10.
struct ToyRun {
    split: GraphSplit,
    instances: Vec<QueryInstance>,
    model: PathformerModel<f32>,
    store: ParameterStore<f32>,
    seconds: f64,
}

static TOY_RUN: Lazy<ToyRun> = Lazy::new(|| {
    let split = common::fixture_split("toy30");
    let cfg = SamplerConfig {
        stage: Stage::Train,
        templates: vec![StructureName::OneP, StructureName::TwoP, StructureName::TwoI],
        count: 20,
        count_overrides: BTreeMap::new(),
        max_answers: 10,
        max_tries: 400,
        seed: 20260819,
    };
    let (instances, _) = sample_queries(&split, &cfg).expect("toy fixture samples");

    let mut tc = TrainConfig::desk(split.train.n_entities(), split.train.n_relations());
    tc.model.dropout = 0.0;
    tc.steps = OVERFIT_STEPS;
    tc.valid_interval = OVERFIT_STEPS;

    let dir = tempfile::tempdir().expect("tempdir");
    let ckpt = dir.path().join("toy30.pfck");
    let mut log = Vec::new();
    let t0 = Instant::now();
    train::<f32>(&instances, &[], &tc, &ckpt, &mut log).expect("toy training runs");
    let seconds = t0.elapsed().as_secs_f64();
    let (model, store, _) = load_checkpoint::<f32>(&ckpt, false).expect("checkpoint loads");
    ToyRun { split, instances, model, store, seconds }
});

/// Deterministic graphs and groundings shared by criteria 1 and 2: three
/// toy graphs up to |V| = 50, five groundings per template per graph
/// (3 x 14 x 5 = 210 groundings total).
fn equivalence_workload() -> Vec<(pathformer_core::kg::KnowledgeGraph, Vec<GroundedQuery>)> {
    let mut rng = pathformer_nn::rng::derive(20260819, 0x6f7261636c65);
    [(12usize, 3usize, 40usize), (30, 4, 110), (50, 5, 170)]
        .into_iter()
        .map(|(v, r, t)| {
            let graph = common::random_graph(&mut rng, v, r, t);
            let mut grounded = Vec::new();
            for structure in StructureName::all() {
                for _ in 0..5 {
                    let (anchors, relations) = common::random_grounding(structure, v, r, &mut rng);
                    grounded.push(GroundedQuery { structure, anchors, relations });
                }
            }
            (graph, grounded)
        })
        .collect()
}

struct GroundedQuery {
    structure: StructureName,
    anchors: Vec<EntityId>,
    relations: Vec<RelationId>,
}

// --------------------------------------------------------------- criteria

#[test]
fn criterion_01_oracle_equivalence() {
    let t0 = Instant::now();
    let workload = equivalence_workload();
    let mut groundings = 0usize;
    for (graph, queries) in &workload {
        for q in queries {
            let tree = q.structure.instantiate(&q.anchors, &q.relations).expect("arity matches");
            let brute = common::brute_force_answers(&tree, graph);
            let oracle = answer_set(&tree, graph).expect("oracle executes");
            assert_eq!(
                oracle, brute,
                "{}: answer set disagrees with existential enumeration for anchors {:?}, \
                 relations {:?} on |V|={}",
                q.structure,
                q.anchors,
                q.relations,
                graph.n_entities()
            );
            groundings += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(groundings >= 200, "only {groundings} groundings checked");
    assert!(secs < 60.0, "equivalence sweep took {secs:.1} s (budget 60 s)");
    println!(
        "[PASS] criterion 1 (oracle equivalence): {groundings} groundings across all 14 \
         templates on 3 graphs (|V| <= 50), exact set equality, {secs:.1} s"
    );
}

#[test]
fn criterion_02_decomposition_soundness() {
    // (disjunct plans, path steps per plan, fork steps per plan)
    fn expected_shape(s: StructureName) -> (usize, usize, usize) {
        use StructureName::*;
        match s {
            OneP | TwoP | ThreeP => (1, 1, 0),
            TwoI | TwoIn | Pi | Pin | Pni => (1, 2, 1),
            ThreeI | ThreeIn => (1, 3, 2),
            Ip | Inp => (1, 3, 1),
            TwoU | Up => (2, 1, 0),
        }
    }

    let workload = equivalence_workload();
    let mut groundings = 0usize;
    for (graph, queries) in &workload {
        for q in queries {
            let tree = q.structure.instantiate(&q.anchors, &q.relations).expect("arity matches");
            let plans = tree.decompose().expect("template decomposes");

            let (n_plans, paths, forks) = expected_shape(q.structure);
            assert_eq!(plans.len(), n_plans, "{}: disjunct count", q.structure);
            for plan in &plans {
                assert_eq!(plan.n_paths(), paths, "{}: path steps", q.structure);
                assert_eq!(plan.n_forks(), forks, "{}: fork steps", q.structure);
            }
            if q.structure == StructureName::Up {
                // Each union disjunct carries both hops in one path.
                for plan in &plans {
                    for step in &plan.steps {
                        let PlanStep::Path(p) = step else { panic!("up plan has no forks") };
                        assert_eq!(p.ops.len(), 2, "up disjunct is a 2-op path");
                        assert!(p.ops.iter().all(|op| matches!(op, PathOp::Project(_))));
                    }
                }
            }

            let mut union = EntitySet::new();
            for plan in &plans {
                union.extend(execute_plan(plan, graph).expect("plan executes"));
            }
            let oracle = answer_set(&tree, graph).expect("oracle executes");
            assert_eq!(
                union, oracle,
                "{}: plan union disagrees with the oracle for anchors {:?}, relations {:?}",
                q.structure, q.anchors, q.relations
            );
            groundings += 1;
        }
    }
    assert!(groundings >= 200, "only {groundings} groundings checked");
    println!(
        "[PASS] criterion 2 (decomposition soundness): plan unions reproduce the oracle on \
         {groundings} groundings; per-template (path, fork) counts match the contract"
    );
}

#[test]
fn criterion_03_gradient_suite() {
    const DRAWS: usize = 20;
    let t0 = Instant::now();
    let report = run_full_suite(20260819, DRAWS)
        .unwrap_or_else(|e| panic!("finite-difference suite failed:\n{e}"));
    let secs = t0.elapsed().as_secs_f64();
    let n_cases = full_suite().len();
    assert!(report.lines().count() >= n_cases, "report covers every case");
    assert!(FD_TOL <= 1e-4, "harness tolerance {FD_TOL:e} looser than contract");
    assert!(secs < 120.0, "gradient suite took {secs:.1} s (budget 120 s)");
    println!(
        "[PASS] criterion 3 (gradient suite): {n_cases} cases x {DRAWS} draws at 64-bit, \
         central differences (h={FD_STEP:.0e}), rel. err < {FD_TOL:.0e}, {secs:.1} s"
    );
}

#[test]
fn criterion_04_loss_closed_forms() {
    // Positive and every negative exactly at the margin: softplus(0) twice.
    let (at_margin, _) = margin_loss(24.0, &[24.0], &[vec![24.0]]);
    assert!((at_margin - 2.0 * LN_2).abs() < 1e-6, "at-margin loss {at_margin} != 2 ln 2");
    // Averaging over more negatives at the margin keeps the closed form.
    let (averaged, _) = margin_loss(24.0, &[24.0], &[vec![24.0; 7]]);
    assert!((averaged - 2.0 * LN_2).abs() < 1e-6, "averaged at-margin loss {averaged}");
    // Perfectly separated batch at gamma = 24 is numerically zero.
    let (separated, _) = margin_loss(24.0, &[0.0], &[vec![48.0]]);
    assert!(separated < 1e-9, "separated loss {separated:e} not vanishing");
    let closed = 2.0 * (-24.0f64).exp().ln_1p();
    assert!((separated - closed).abs() < 1e-6, "separated loss departs from 2 softplus(-24)");
    println!(
        "[PASS] criterion 4 (loss closed forms): margin case = 2 ln 2 within 1e-6; \
         separated case {separated:.2e} < 1e-9 at gamma=24"
    );
}

#[test]
fn criterion_05_overfit_sanity() {
    let run = &*TOY_RUN;
    let report =
        eval::mrr(&run.model, &run.store, &run.instances, Stage::Train).expect("evaluation runs");
    let trained = [StructureName::OneP, StructureName::TwoP, StructureName::TwoI];
    for s in trained {
        assert!(report.per_structure.contains_key(&s), "{s} missing from the report");
    }
    let metric = report.mean_over(&trained).expect("trained structures evaluated");
    assert!(OVERFIT_STEPS <= 5000, "step budget exceeded");
    assert!(
        metric >= 0.90,
        "train-set MRR {metric:.4} below 0.90 after {OVERFIT_STEPS} steps"
    );
    assert!(run.seconds < 300.0, "training took {:.1} s (budget 300 s)", run.seconds);
    println!(
        "[PASS] criterion 5 (overfit sanity): train-set MRR {:.3} on 1p/2p/2i after {} steps \
         (d=32, k1=1) in {:.1} s",
        metric, OVERFIT_STEPS, run.seconds
    );
}

#[test]
fn criterion_06_generalization_floor() {
    let run = &*TOY_RUN;
    let cfg = SamplerConfig {
        stage: Stage::Test,
        templates: vec![StructureName::OneP],
        count: 25,
        count_overrides: BTreeMap::new(),
        max_answers: 10,
        max_tries: 600,
        seed: 31,
    };
    let (test_queries, _) = sample_queries(&run.split, &cfg).expect("test-stage sampling");
    let report =
        eval::mrr(&run.model, &run.store, &test_queries, Stage::Test).expect("evaluation runs");
    let got = report
        .per_structure
        .get(&StructureName::OneP)
        .expect("at least one 1p query has a held-out answer");

    // Expected MRR of a uniform-random ranking over each query's actual
    // filtered pool: every held-out answer competes against the pool of
    // 1 + (V - |answers|) candidates, so E[1/rank] = H_P / P.
    let v = run.split.train.n_entities();
    let mut per_instance = Vec::new();
    for inst in &test_queries {
        if inst.non_trivial_answers(Stage::Test).is_empty() {
            continue;
        }
        let pool = v - inst.answers(Stage::Test).len() + 1;
        let harmonic: f64 = (1..=pool).map(|k| 1.0 / k as f64).sum();
        per_instance.push(harmonic / pool as f64);
    }
    assert_eq!(per_instance.len(), got.queries, "baseline covers the same queries");
    let baseline = per_instance.iter().sum::<f64>() / per_instance.len() as f64;
    assert!(
        got.mrr > 3.0 * baseline,
        "1p test-stage MRR {:.4} does not exceed 3 x uniform baseline {:.4}",
        got.mrr,
        baseline
    );
    println!(
        "[PASS] criterion 6 (generalization floor): 1p test-stage MRR {:.3} on {} held-out \
         queries vs uniform-ranking expectation {:.3} (floor 3x = {:.3})",
        got.mrr,
        got.queries,
        baseline,
        3.0 * baseline
    );
}

#[test]
fn criterion_07_dnf_exactness() {
    let mut store = ParameterStore::<f64>::new();
    let mut config = ModelConfig::desk(30, 5);
    config.d = 16;
    config.heads = 2;
    config.d_ffn = 32;
    config.dropout = 0.0;
    let model = PathformerModel::init(&mut store, config).expect("model init");

    let no_answers = (Vec::new(), Vec::new(), Vec::new());
    let instance = |structure, anchors: &[u32], relations: &[u32]| QueryInstance {
        structure,
        anchors: anchors.iter().map(|&e| EntityId(e)).collect(),
        relations: relations.iter().map(|&r| RelationId(r)).collect(),
        answers_train: no_answers.0.clone(),
        answers_valid: no_answers.1.clone(),
        answers_test: no_answers.2.clone(),
    };

    // (union instance, the union-free sub-trees it must match bitwise)
    let cases = [
        (
            instance(StructureName::TwoU, &[3, 11], &[1, 4]),
            vec![
                instance(StructureName::OneP, &[3], &[1]),
                instance(StructureName::OneP, &[11], &[4]),
            ],
        ),
        (
            instance(StructureName::Up, &[3, 11], &[1, 4, 2]),
            vec![
                instance(StructureName::TwoP, &[3], &[1, 2]),
                instance(StructureName::TwoP, &[11], &[4, 2]),
            ],
        ),
    ];

    for (union_inst, subs) in &cases {
        // The manual sub-trees really are the DNF of the union query.
        let dnf = union_inst.tree().unwrap().to_dnf().unwrap();
        let manual: Vec<_> = subs.iter().map(|s| s.tree().unwrap()).collect();
        assert_eq!(dnf, manual, "{}: sub-trees are the disjuncts", union_inst.structure);

        let union_vecs =
            model.encode_queries(&store, std::slice::from_ref(union_inst)).expect("encode");
        assert_eq!(union_vecs.disjuncts, 2);
        for (k, sub) in subs.iter().enumerate() {
            let sub_vecs =
                model.encode_queries(&store, std::slice::from_ref(sub)).expect("encode");
            assert_eq!(sub_vecs.disjuncts, 1);
            let got = union_vecs.query(0)[k];
            let want = sub_vecs.query(0)[0];
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(want) {
                assert_eq!(
                    a.to_bits(),
                    b.to_bits(),
                    "{}: disjunct {k} differs from its union-free sub-tree",
                    union_inst.structure
                );
            }
        }

        // Distance to the union is the min over its disjunct distances.
        for e in 0..30u32 {
            let ev = model.entity_vector(&store, EntityId(e)).unwrap();
            let disjuncts = union_vecs.query(0);
            let (got, _) = min_l1(ev, &disjuncts, None);
            let manual_min = disjuncts
                .iter()
                .map(|q| ev.iter().zip(*q).map(|(a, b)| (a - b).abs()).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(got, manual_min, "{}: entity {e}", union_inst.structure);
        }
    }
    println!(
        "[PASS] criterion 7 (DNF exactness): 2u/up disjunct encodings bitwise equal their \
         union-free sub-trees; distance is the min over disjuncts on all 30 probe entities"
    );
}

#[test]
fn criterion_08_mask_mode_contract() {
    // Encoder-level contract on random parameters at 64-bit.
    let mut store = ParameterStore::<f64>::new();
    let mut rng = pathformer_nn::rng::derive(8, 0x6d61736b);
    let cfg = EncoderConfig {
        d: 16,
        layers: 2,
        heads: 2,
        d_ffn: 32,
        dropout: 0.0,
        mask: MaskMode::Causal,
        positional: PositionalEncoding::Sinusoidal,
    };
    let enc = TransformerEncoder::init(&mut store, "enc", cfg, 0, &mut rng).expect("encoder");
    let len = 5usize;
    let data: Vec<f64> = (0..len * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(&[1, len, 16], data).unwrap();
    let pass = Pass::inference();

    for cut in 0..len - 1 {
        let mut bumped = x.clone();
        for j in cut + 1..len {
            for c in 0..16 {
                bumped.row3_mut(0, j)[c] += 0.37 + 0.11 * (j + c) as f64;
            }
        }
        let (y1, _) = enc.forward(&store, &x, MaskMode::Causal, &pass).unwrap();
        let (y2, _) = enc.forward(&store, &bumped, MaskMode::Causal, &pass).unwrap();
        for i in 0..=cut {
            for c in 0..16 {
                assert_eq!(
                    y1.row3(0, i)[c].to_bits(),
                    y2.row3(0, i)[c].to_bits(),
                    "causal output at position {i} moved when perturbing positions > {cut}"
                );
            }
        }

        let (b1, _) = enc.forward(&store, &x, MaskMode::Bidirectional, &pass).unwrap();
        let (b2, _) = enc.forward(&store, &bumped, MaskMode::Bidirectional, &pass).unwrap();
        let p1 = mean_pool(&b1).unwrap();
        let p2 = mean_pool(&b2).unwrap();
        let diff = p1
            .data()
            .iter()
            .zip(p2.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(
            diff > 1e-8,
            "bidirectional pooled output insensitive ({diff:e}) to perturbing positions > {cut}"
        );
    }

    // The ablation harness reports both modes side by side. The direction
    // of the gap at this scale is reported, not asserted.
    let split = common::fixture_split("toy30");
    let cfg = SamplerConfig {
        stage: Stage::Train,
        templates: vec![StructureName::OneP, StructureName::TwoP],
        count: 12,
        count_overrides: BTreeMap::new(),
        max_answers: 10,
        max_tries: 400,
        seed: 77,
    };
    let (instances, _) = sample_queries(&split, &cfg).expect("sampling");
    let dir = tempfile::tempdir().expect("tempdir");
    let mut trained = Vec::new();
    for (name, mask) in
        [("bidirectional", MaskMode::Bidirectional), ("causal", MaskMode::Causal)]
    {
        let mut tc = TrainConfig::desk(30, 5);
        tc.model.d = 16;
        tc.model.heads = 2;
        tc.model.d_ffn = 32;
        tc.model.dropout = 0.0;
        tc.model.mask = mask;
        tc.batch = 32;
        tc.u = 8;
        tc.steps = 400;
        tc.valid_interval = 400;
        let ckpt = dir.path().join(format!("{name}.pfck"));
        let mut log = Vec::new();
        train::<f32>(&instances, &[], &tc, &ckpt, &mut log).expect("short training run");
        let (model, store, _) = load_checkpoint::<f32>(&ckpt, false).expect("checkpoint loads");
        trained.push((name.to_string(), model, store));
    }
    let refs: Vec<(String, &PathformerModel<f32>, &ParameterStore<f32>)> =
        trained.iter().map(|(n, m, s)| (n.clone(), m, s)).collect();
    let table = eval::ablation_table(&refs, &instances, Stage::Train).expect("ablation table");
    assert_eq!(table.reports.len(), 2, "both mask modes reported");
    for report in &table.reports {
        for s in [StructureName::OneP, StructureName::TwoP] {
            assert!(report.per_structure.contains_key(&s), "{s} missing from a report");
        }
    }
    println!("{}", table.render_text());
    let group = [StructureName::OneP, StructureName::TwoP];
    let bi = table.reports[0].mean_over(&group).unwrap();
    let causal = table.reports[1].mean_over(&group).unwrap();
    println!(
        "[PASS] criterion 8 (mask-mode contract): causal prefixes bitwise invariant, \
         bidirectional pooling sensitive; ablation gap bidirectional-causal = {:+.2} points \
         (reported, not asserted)",
        (bi - causal) * 100.0
    );
}

#[test]
fn criterion_09_training_determinism() {
    let split = common::fixture_split("toy30");
    let train_cfg = SamplerConfig {
        stage: Stage::Train,
        templates: vec![StructureName::OneP, StructureName::TwoP, StructureName::TwoI],
        count: 12,
        count_overrides: BTreeMap::new(),
        max_answers: 10,
        max_tries: 400,
        seed: 20260819,
    };
    let valid_cfg = SamplerConfig {
        stage: Stage::Valid,
        templates: vec![StructureName::OneP],
        count: 6,
        count_overrides: BTreeMap::new(),
        max_answers: 10,
        max_tries: 400,
        seed: 55,
    };
    let (instances, _) = sample_queries(&split, &train_cfg).expect("sampling");
    let (valid, _) = sample_queries(&split, &valid_cfg).expect("sampling");

    let run = |dir: &std::path::Path| {
        let mut tc = TrainConfig::desk(30, 5);
        tc.steps = 100;
        tc.batch = 16;
        tc.u = 8;
        tc.valid_interval = 50;
        let ckpt = dir.join("run.pfck");
        let mut log = Vec::new();
        train::<f32>(&instances, &valid, &tc, &ckpt, &mut log).expect("training runs");
        (log, std::fs::read(&ckpt).expect("checkpoint written"))
    };

    let dir_a = tempfile::tempdir().expect("tempdir");
    let dir_b = tempfile::tempdir().expect("tempdir");
    let (log_a, ckpt_a) = run(dir_a.path());
    let (log_b, ckpt_b) = run(dir_b.path());

    let text = String::from_utf8(log_a.clone()).expect("log is UTF-8");
    assert!(text.contains("\"step\":100"), "log records the 100-step loss line");
    assert_eq!(log_a, log_b, "loss logs differ between identically seeded runs");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between identically seeded runs");
    println!(
        "[PASS] criterion 9 (determinism): two identically seeded 100-step runs produced \
         bit-identical loss logs ({} bytes) and checkpoints ({} bytes)",
        log_a.len(),
        ckpt_a.len()
    );
}

#[test]
fn criterion_10_rank_oracle() {
    // Rank rule on random vectors, heavy on ties.
    let mut rng = pathformer_nn::rng::derive(10, 0x72616e6b);
    let mut vectors = 0usize;
    for case in 0..120 {
        let n = rng.gen_range(2..=40);
        let dists: Vec<f64> = match case % 3 {
            // Quantized draws force tie blocks.
            0 => (0..n).map(|_| rng.gen_range(0..6) as f64 * 0.25).collect(),
            1 => (0..n).map(|_| rng.gen::<f64>()).collect(),
            _ => vec![1.5; n],
        };
        for i in 0..n {
            let expect = common::rank_by_sort(&dists, i);
            let others = dists.iter().enumerate().filter_map(|(k, &d)| (k != i).then_some(d));
            assert_eq!(rank_among(dists[i], others), expect, "vector {dists:?} index {i}");
        }
        vectors += 1;
    }
    assert!(vectors >= 100);

    // The composed metric equals the sort-oracle fold on a real model:
    // same grouping, same filtered pools, ranks from the sort instead of
    // the streaming comparison.
    let run = &*TOY_RUN;
    let report =
        eval::mrr(&run.model, &run.store, &run.instances, Stage::Train).expect("evaluation runs");
    let v = run.split.train.n_entities();
    let mut by_structure: BTreeMap<StructureName, Vec<QueryInstance>> = BTreeMap::new();
    for inst in &run.instances {
        by_structure.entry(inst.structure).or_default().push(inst.clone());
    }
    let mut checked = 0usize;
    for (structure, insts) in by_structure {
        let qv = run.model.encode_queries(&run.store, &insts).expect("encode");
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, inst) in insts.iter().enumerate() {
            let evaluated = inst.non_trivial_answers(Stage::Train);
            if evaluated.is_empty() {
                continue;
            }
            let dist =
                eval::entity_distances(&run.model, &run.store, &qv.query(i)).expect("distances");
            let answers = inst.answers(Stage::Train);
            let mut inst_sum = 0.0;
            for &e in &evaluated {
                let mut pool = vec![dist[e.0 as usize]];
                pool.extend(
                    (0..v as u32)
                        .filter(|c| answers.binary_search(&EntityId(*c)).is_err())
                        .map(|c| dist[c as usize]),
                );
                inst_sum += 1.0 / common::rank_by_sort(&pool, 0);
                checked += 1;
            }
            sum += inst_sum / evaluated.len() as f64;
            n += 1;
        }
        let got = report.per_structure.get(&structure).expect("structure evaluated");
        assert_eq!(got.mrr, sum / n as f64, "{structure}: MRR departs from the sort oracle");
        assert_eq!(got.queries, n, "{structure}: query count");
    }
    assert!(checked > 0);
    println!(
        "[PASS] criterion 10 (rank oracle): mid-rank rule exact on {vectors} random vectors \
         (ties included); composed MRR matches the sort-oracle fold on {checked} ranked answers"
    );
}
