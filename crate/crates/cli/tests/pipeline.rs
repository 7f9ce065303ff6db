//! Drives the compiled binary end to end on the committed fixture graph:
//! ingest -> sample -> oracle -> train -> eval -> ablate, the exit-code
//! contract, and byte-level idempotence of seeded subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pathformer"))
}

fn toy30() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/toy30")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout_ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "command failed ({:?})\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout is UTF-8")
}

/// Ingest the fixture into `dir/<name>` and return the split directory.
fn ingest(dir: &Path, name: &str) -> PathBuf {
    let split = dir.join(name);
    let fx = toy30();
    let out = run(bin()
        .arg("ingest")
        .arg("--train")
        .arg(fx.join("train.tsv"))
        .arg("--valid")
        .arg(fx.join("valid.tsv"))
        .arg("--test")
        .arg(fx.join("test.tsv"))
        .arg("--out")
        .arg(&split));
    let text = stdout_ok(out);
    assert!(text.contains("30 entities, 5 relations"), "{text}");
    split
}

fn write_sampler_conf(path: &Path, stage: &str, templates: &str, count: usize, seed: u64) {
    fs::write(
        path,
        format!(
            "stage = {stage}\ntemplates = {templates}\ncount = {count}\n\
             max_answers = 10\nmax_tries = 300\nseed = {seed}\n"
        ),
    )
    .unwrap();
}

const TRAIN_CONF: &str = "regime = epfo-5\nd = 16\nheads = 2\nd_ffn = 32\ndropout = 0\n\
                          steps = 300\nbatch = 16\nu = 8\nvalid_interval = 150\nseed = 11\n";

// ----------------------------------------------------------------- checks

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let split = ingest(dir.path(), "split");

    let sconf = dir.path().join("sampler.conf");
    write_sampler_conf(&sconf, "train", "1p,2p", 8, 9);
    let queries = dir.path().join("queries.jsonl");
    let text = stdout_ok(run(bin()
        .arg("sample")
        .arg("--split")
        .arg(&split)
        .arg("--config")
        .arg(&sconf)
        .arg("--out")
        .arg(&queries)));
    assert!(text.contains("16 instances written"), "{text}");

    let text = stdout_ok(run(bin()
        .arg("oracle")
        .arg("--split")
        .arg(&split)
        .arg("--queries")
        .arg(&queries)
        .args(["--stage", "test"])));
    assert!(text.contains("all stored answer sets match the oracle"), "{text}");

    let vconf = dir.path().join("valid.conf");
    write_sampler_conf(&vconf, "valid", "1p", 8, 13);
    let vqueries = dir.path().join("valid.jsonl");
    stdout_ok(run(bin()
        .arg("sample")
        .arg("--split")
        .arg(&split)
        .arg("--config")
        .arg(&vconf)
        .arg("--out")
        .arg(&vqueries)));

    let tconf = dir.path().join("train.conf");
    fs::write(&tconf, TRAIN_CONF).unwrap();
    let ckpt = dir.path().join("model.pfck");
    let log = dir.path().join("metrics.jsonl");
    let text = stdout_ok(run(bin()
        .arg("train")
        .arg("--split")
        .arg(&split)
        .arg("--queries")
        .arg(&queries)
        .arg("--valid-queries")
        .arg(&vqueries)
        .arg("--config")
        .arg(&tconf)
        .arg("--out")
        .arg(&ckpt)
        .arg("--log")
        .arg(&log)));
    assert!(ckpt.exists(), "checkpoint written");
    assert!(text.contains("best checkpoint from step"), "{text}");
    assert!(text.contains("final training loss"), "{text}");
    let metrics = fs::read_to_string(&log).unwrap();
    assert!(metrics.lines().next().unwrap().contains("\"kind\":\"train-log\""), "{metrics}");
    assert!(metrics.contains("\"step\":300"), "{metrics}");

    let report_json = dir.path().join("report.json");
    let text = stdout_ok(run(bin()
        .arg("eval")
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--queries")
        .arg(&queries)
        .args(["--stage", "train"])
        .arg("--json-out")
        .arg(&report_json)));
    assert!(text.contains("epfo-avg"), "{text}");
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_json).unwrap()).unwrap();
    assert!(parsed.get("1p").is_some(), "JSON report carries per-structure entries");

    let text = stdout_ok(run(bin()
        .arg("ablate")
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--queries")
        .arg(&queries)
        .args(["--stage", "train"])
        .args(["--threads", "2"])));
    assert!(text.contains("(+0.00)"), "self-ablation shows zero deltas:\n{text}");
}

#[test]
fn seeded_subcommands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let split_a = ingest(dir.path(), "split_a");
    let split_b = ingest(dir.path(), "split_b");
    for file in ["entities.tsv", "relations.tsv", "train.tsv", "valid.tsv", "test.tsv", "report.json"]
    {
        assert_eq!(
            fs::read(split_a.join(file)).unwrap(),
            fs::read(split_b.join(file)).unwrap(),
            "{file} differs between identical ingest runs"
        );
    }

    // Same config -> same bytes; --seed overrides the config file's seed.
    let conf_9 = dir.path().join("s9.conf");
    write_sampler_conf(&conf_9, "train", "1p,2p", 8, 9);
    let conf_1 = dir.path().join("s1.conf");
    write_sampler_conf(&conf_1, "train", "1p,2p", 8, 1);
    let q = |name: &str, conf: &Path, seed: Option<u64>| {
        let out = dir.path().join(name);
        let mut cmd = bin();
        cmd.arg("sample")
            .arg("--split")
            .arg(&split_a)
            .arg("--config")
            .arg(conf)
            .arg("--out")
            .arg(&out);
        if let Some(s) = seed {
            cmd.args(["--seed", &s.to_string()]);
        }
        stdout_ok(run(&mut cmd));
        fs::read(&out).unwrap()
    };
    let first = q("q1.jsonl", &conf_9, None);
    let second = q("q2.jsonl", &conf_9, None);
    let overridden = q("q3.jsonl", &conf_1, Some(9));
    assert_eq!(first, second, "sample is not idempotent");
    assert_eq!(first, overridden, "--seed does not override the config seed");

    // Training twice from the same inputs gives identical logs/checkpoints.
    let queries = dir.path().join("q1.jsonl");
    let tconf = dir.path().join("train.conf");
    fs::write(&tconf, TRAIN_CONF).unwrap();
    let train_run = |name: &str| {
        let ckpt = dir.path().join(format!("{name}.pfck"));
        let log = dir.path().join(format!("{name}.jsonl"));
        stdout_ok(run(bin()
            .arg("train")
            .arg("--split")
            .arg(&split_a)
            .arg("--queries")
            .arg(&queries)
            .arg("--config")
            .arg(&tconf)
            .args(["-c", "steps=100", "-c", "valid_interval=50"])
            .arg("--out")
            .arg(&ckpt)
            .arg("--log")
            .arg(&log)));
        (fs::read(&ckpt).unwrap(), fs::read(&log).unwrap())
    };
    let (ckpt_a, log_a) = train_run("run_a");
    let (ckpt_b, log_b) = train_run("run_b");
    assert_eq!(log_a, log_b, "metrics logs differ between identical train runs");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between identical train runs");

    // Evaluation of the same checkpoint prints the same report.
    let eval_run = || {
        stdout_ok(run(bin()
            .arg("eval")
            .arg("--ckpt")
            .arg(dir.path().join("run_a.pfck"))
            .arg("--queries")
            .arg(&queries)
            .args(["--stage", "train"])))
    };
    assert_eq!(eval_run(), eval_run(), "eval output differs between identical runs");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // Usage errors exit 1; help exits 0.
    let out = run(bin().arg("no-such-command"));
    assert_eq!(out.status.code(), Some(1));
    let out = run(bin().arg("--help"));
    assert_eq!(out.status.code(), Some(0));

    // Data errors exit 2.
    let out = run(bin()
        .args(["ingest", "--train", "/nonexistent", "--valid", "/nonexistent"])
        .args(["--test", "/nonexistent", "--out"])
        .arg(dir.path().join("x")));
    assert_eq!(out.status.code(), Some(2), "missing input file must exit 2");

    // A query file whose stored answers disagree with the graph exits 2.
    let split = ingest(dir.path(), "split");
    let sconf = dir.path().join("sampler.conf");
    write_sampler_conf(&sconf, "train", "1p", 4, 9);
    let queries = dir.path().join("queries.jsonl");
    stdout_ok(run(bin()
        .arg("sample")
        .arg("--split")
        .arg(&split)
        .arg("--config")
        .arg(&sconf)
        .arg("--out")
        .arg(&queries)));
    let text = fs::read_to_string(&queries).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut inst: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    // Eleven claimed answers cannot match anything the sampler kept
    // (max_answers = 10).
    inst["answers_train"] = serde_json::json!([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
    lines[1] = inst.to_string();
    fs::write(&queries, lines.join("\n") + "\n").unwrap();
    let out = run(bin()
        .arg("oracle")
        .arg("--split")
        .arg(&split)
        .arg("--queries")
        .arg(&queries)
        .args(["--stage", "train"]));
    assert_eq!(out.status.code(), Some(2), "tampered answers must exit 2");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("disagree"), "{stderr}");

    // The gradient suite on a healthy build exits 0.
    let out = run(bin().args(["gradcheck", "--draws", "1"]));
    assert_eq!(out.status.code(), Some(0), "gradcheck must pass on a healthy build");
}

#[test]
fn eval_with_zero_queries_is_empty_and_ok() {
    let dir = tempfile::tempdir().unwrap();
    let split = ingest(dir.path(), "split");
    let sconf = dir.path().join("sampler.conf");
    write_sampler_conf(&sconf, "train", "1p", 2, 9);
    let queries = dir.path().join("queries.jsonl");
    stdout_ok(run(bin()
        .arg("sample")
        .arg("--split")
        .arg(&split)
        .arg("--config")
        .arg(&sconf)
        .arg("--out")
        .arg(&queries)));
    let tconf = dir.path().join("train.conf");
    fs::write(&tconf, TRAIN_CONF).unwrap();
    let ckpt = dir.path().join("model.pfck");
    stdout_ok(run(bin()
        .arg("train")
        .arg("--split")
        .arg(&split)
        .arg("--queries")
        .arg(&queries)
        .arg("--config")
        .arg(&tconf)
        .args(["-c", "steps=100", "-c", "valid_interval=50"])
        .arg("--out")
        .arg(&ckpt)
        .arg("--log")
        .arg(dir.path().join("m.jsonl"))));

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "{\"kind\":\"query-set\",\"seed\":0,\"stage\":\"test\",\"counts\":{}}\n")
        .unwrap();
    let text = stdout_ok(run(bin()
        .arg("eval")
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--queries")
        .arg(&empty)
        .args(["--stage", "test"])));
    assert!(text.contains("stage: test"), "{text}");
}
