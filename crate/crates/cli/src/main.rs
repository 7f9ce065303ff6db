//! `pathformer` — one binary driving the whole pipeline: TSV triples ->
//! split directory -> sampled queries -> training -> ranking reports, plus
//! the stored-answer diff and the finite-difference gradient suite.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pathformer_core::config::KvConfig;
use pathformer_core::eval;
use pathformer_core::gradcheck::run_full_suite;
use pathformer_core::kg::{load_split, read_split_dir, write_split_dir, EntityId, Stage};
use pathformer_core::model::{load_checkpoint, PathformerModel};
use pathformer_core::oracle::answer_sets;
use pathformer_core::query::{
    read_query_file, write_query_file, QueryFileMeta, QUERY_FILE_KIND,
};
use pathformer_core::sampler::{sample_queries, SamplerConfig};
use pathformer_core::train::{train, TrainConfig};
use pathformer_core::Error as CoreError;
use pathformer_nn::ParameterStore;

#[derive(Parser)]
#[command(
    name = "pathformer",
    version,
    about = "Existential first-order query answering over incomplete knowledge graphs"
)]
struct Cli {
    /// Cap the worker-thread count used by parallel evaluation.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load three TSV triple files and write a normalized split directory.
    Ingest {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long, value_name = "FILE")]
        valid: PathBuf,
        #[arg(long, value_name = "FILE")]
        test: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Sample query instances (with oracle answers) from a split directory.
    Sample {
        #[arg(long, value_name = "DIR")]
        split: PathBuf,
        /// key = value config file (stage, templates, count, ...).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Output query file (JSON lines).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Extra key=value settings overlaid on the config file.
        #[arg(short = 'c', value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Recompute every stored answer set against the split and diff them.
    Oracle {
        #[arg(long, value_name = "DIR")]
        split: PathBuf,
        #[arg(long, value_name = "FILE")]
        queries: PathBuf,
        /// Stage whose answer counts are summarized.
        #[arg(long, default_value = "test")]
        stage: Stage,
    },
    /// Train a model and save the best (or final) checkpoint.
    Train {
        #[arg(long, value_name = "DIR")]
        split: PathBuf,
        #[arg(long, value_name = "FILE")]
        queries: PathBuf,
        /// Validation queries for best-checkpoint selection.
        #[arg(long, value_name = "FILE")]
        valid_queries: Option<PathBuf>,
        /// key = value config file (regime, d, k1, lr, steps, ...).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Checkpoint path to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Metrics log destination (JSON lines); stdout when omitted.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        /// Override the config seed (drives sampling and initialization).
        #[arg(long)]
        seed: Option<u64>,
        /// Extra key=value settings overlaid on the config file.
        #[arg(short = 'c', value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Rank entities against queries and report per-structure MRR.
    Eval {
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        #[arg(long, value_name = "FILE")]
        queries: PathBuf,
        #[arg(long, default_value = "test")]
        stage: Stage,
        /// Also write the report as pretty-printed JSON.
        #[arg(long, value_name = "FILE")]
        json_out: Option<PathBuf>,
    },
    /// Evaluate several checkpoints side by side on the same queries.
    Ablate {
        /// Checkpoint to include (repeat; the first is the baseline).
        #[arg(long = "ckpt", value_name = "FILE", required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long, value_name = "FILE")]
        queries: PathBuf,
        #[arg(long, default_value = "test")]
        stage: Stage,
        /// Also write the table as pretty-printed JSON.
        #[arg(long, value_name = "FILE")]
        json_out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 20260819)]
        seed: u64,
        /// Parameter draws per case.
        #[arg(long, default_value_t = 3)]
        draws: usize,
    },
}

/// A subcommand outcome the process must report: either a module error
/// (exit 2 or 3 by kind) or an explicit check failure carrying its code.
enum Failure {
    Core(CoreError),
    Check { code: u8, message: String },
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Core(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Check { message, .. } => write!(f, "{message}"),
        }
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Check { code, .. } => *code,
        Failure::Core(CoreError::NonFiniteLoss { .. }) => 3,
        Failure::Core(CoreError::Nn(pathformer_nn::Error::NonFinite { .. })) => 3,
        Failure::Core(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let usage = !matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(exit_code(&f))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CoreError::Misuse(format!("cannot configure {n} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Ingest { train, valid, test, out } => ingest(&train, &valid, &test, &out),
        Command::Sample { split, config, out, seed, set } => {
            sample(&split, &config, &out, seed, &set)
        }
        Command::Oracle { split, queries, stage } => oracle_diff(&split, &queries, stage),
        Command::Train { split, queries, valid_queries, config, out, log, seed, set } => {
            train_cmd(&split, &queries, valid_queries.as_deref(), &config, &out, log.as_deref(), seed, &set)
        }
        Command::Eval { ckpt, queries, stage, json_out } => {
            eval_cmd(&ckpt, &queries, stage, json_out.as_deref())
        }
        Command::Ablate { ckpts, queries, stage, json_out } => {
            ablate_cmd(&ckpts, &queries, stage, json_out.as_deref())
        }
        Command::Gradcheck { seed, draws } => gradcheck_cmd(seed, draws),
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Train => "train",
        Stage::Valid => "valid",
        Stage::Test => "test",
    }
}

fn ingest(train: &Path, valid: &Path, test: &Path, out: &Path) -> Result<(), Failure> {
    let (split, report) = load_split(train, valid, test)?;
    write_split_dir(out, &split, &report)?;
    println!("{} entities, {} relations", report.entities, report.relations);
    println!(
        "train: {} rows -> {} triples ({} duplicate rows)",
        report.rows.train, report.triples.train, report.duplicates.train
    );
    println!(
        "valid: {} rows -> {} triples cumulative ({} duplicate rows)",
        report.rows.valid, report.triples.valid, report.duplicates.valid
    );
    println!(
        "test:  {} rows -> {} triples cumulative ({} duplicate rows)",
        report.rows.test, report.triples.test, report.duplicates.test
    );
    println!("split written to {}", out.display());
    Ok(())
}

fn sample(
    split_dir: &Path,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    set: &[String],
) -> Result<(), Failure> {
    let split = read_split_dir(split_dir)?;
    let mut kv = KvConfig::load(config)?;
    kv.overlay(set)?;
    if let Some(s) = seed {
        kv.overlay(&[format!("seed={s}")])?;
    }
    let cfg = SamplerConfig::from_kv(kv)?;
    let (instances, report) = sample_queries(&split, &cfg)?;

    let counts = report.structures.iter().map(|(name, st)| (name.clone(), st.kept)).collect();
    let meta = QueryFileMeta {
        kind: QUERY_FILE_KIND.to_string(),
        seed: cfg.seed,
        stage: cfg.stage,
        counts,
    };
    write_query_file(out, &meta, &instances)?;

    for (name, st) in &report.structures {
        println!("{name}: kept {}/{} after {} attempts", st.kept, st.requested, st.attempts);
    }
    if !report.shortfall.is_empty() {
        eprintln!("warning: fell short of the requested count for {}", report.shortfall.join(", "));
    }
    println!("{} instances written to {}", instances.len(), out.display());
    Ok(())
}

fn oracle_diff(split_dir: &Path, queries: &Path, stage: Stage) -> Result<(), Failure> {
    let split = read_split_dir(split_dir)?;
    let (_, instances) = read_query_file(queries)?;

    let mut mismatches: Vec<String> = Vec::new();
    let mut answers = 0usize;
    let mut non_trivial = 0usize;
    for (idx, inst) in instances.iter().enumerate() {
        let tree = inst.tree()?;
        let fresh = answer_sets(&tree, &split)?;
        let stored =
            [("train", &inst.answers_train), ("valid", &inst.answers_valid), ("test", &inst.answers_test)];
        for (k, (label, stored_answers)) in stored.into_iter().enumerate() {
            let recomputed: Vec<EntityId> = fresh[k].iter().copied().collect();
            if &recomputed != stored_answers {
                mismatches.push(format!(
                    "query {idx} ({}): {label}-stage answers differ (stored {}, recomputed {})",
                    inst.structure,
                    stored_answers.len(),
                    recomputed.len()
                ));
            }
        }
        answers += inst.answers(stage).len();
        non_trivial += inst.non_trivial_answers(stage).len();
    }

    println!(
        "{} queries checked; {} answers ({} non-trivial) at the {} stage",
        instances.len(),
        answers,
        non_trivial,
        stage_name(stage)
    );
    if mismatches.is_empty() {
        println!("all stored answer sets match the oracle");
        Ok(())
    } else {
        for m in mismatches.iter().take(5) {
            eprintln!("{m}");
        }
        if mismatches.len() > 5 {
            eprintln!("... and {} more", mismatches.len() - 5);
        }
        Err(Failure::Check {
            code: 2,
            message: format!("{} stored answer set(s) disagree with the oracle", mismatches.len()),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    split_dir: &Path,
    queries: &Path,
    valid_queries: Option<&Path>,
    config: &Path,
    out: &Path,
    log: Option<&Path>,
    seed: Option<u64>,
    set: &[String],
) -> Result<(), Failure> {
    let split = read_split_dir(split_dir)?;
    let (_, instances) = read_query_file(queries)?;
    let valid = match valid_queries {
        Some(p) => read_query_file(p)?.1,
        None => Vec::new(),
    };
    let mut kv = KvConfig::load(config)?;
    kv.overlay(set)?;
    if let Some(s) = seed {
        kv.overlay(&[format!("seed={s}")])?;
    }
    let cfg = TrainConfig::from_kv(&mut kv, split.train.n_entities(), split.train.n_relations())?;
    kv.finish()?;

    let summary = match log {
        Some(path) => {
            let mut f = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
            train::<f32>(&instances, &valid, &cfg, out, &mut f)?
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            train::<f32>(&instances, &valid, &cfg, out, &mut lock)?
        }
    };
    match summary.best {
        Some((step, mrr)) => println!(
            "best checkpoint from step {step} (validation MRR {mrr:.4}) -> {}",
            summary.checkpoint.display()
        ),
        None => println!(
            "final weights after {} steps -> {}",
            summary.steps,
            summary.checkpoint.display()
        ),
    }
    println!("final training loss {:.6}", summary.final_loss);
    Ok(())
}

fn eval_cmd(
    ckpt: &Path,
    queries: &Path,
    stage: Stage,
    json_out: Option<&Path>,
) -> Result<(), Failure> {
    let (model, store, _) = load_checkpoint::<f32>(ckpt, false)?;
    let (_, instances) = read_query_file(queries)?;
    let report = eval::mrr(&model, &store, &instances, stage)?;
    print!("{}", report.render_text());
    println!("{}", report.to_json());
    if let Some(path) = json_out {
        let pretty = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
        fs::write(path, pretty + "\n").map_err(|e| CoreError::io(path, e))?;
    }
    Ok(())
}

fn ablate_cmd(
    ckpts: &[PathBuf],
    queries: &Path,
    stage: Stage,
    json_out: Option<&Path>,
) -> Result<(), Failure> {
    if ckpts.len() < 2 {
        return Err(CoreError::Misuse("ablate needs at least two --ckpt files".into()).into());
    }
    let mut loaded: Vec<(String, PathformerModel<f32>, ParameterStore<f32>)> = Vec::new();
    for (i, path) in ckpts.iter().enumerate() {
        let mut name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        if loaded.iter().any(|(n, _, _)| *n == name) {
            name = format!("{name}#{i}");
        }
        let (model, store, _) = load_checkpoint::<f32>(path, false)?;
        loaded.push((name, model, store));
    }
    let (_, instances) = read_query_file(queries)?;
    let refs: Vec<(String, &PathformerModel<f32>, &ParameterStore<f32>)> =
        loaded.iter().map(|(n, m, s)| (n.clone(), m, s)).collect();
    let table = eval::ablation_table(&refs, &instances, stage)?;
    print!("{}", table.render_text());
    println!("{}", table.to_json());
    if let Some(path) = json_out {
        let pretty = serde_json::to_string_pretty(&table.to_json()).expect("table serializes");
        fs::write(path, pretty + "\n").map_err(|e| CoreError::io(path, e))?;
    }
    Ok(())
}

fn gradcheck_cmd(seed: u64, draws: usize) -> Result<(), Failure> {
    match run_full_suite(seed, draws) {
        Ok(report) => {
            print!("{report}");
            println!("all gradient checks passed (seed {seed}, {draws} draws per case)");
            Ok(())
        }
        // The failing report is carried in the error; surface it and exit
        // with the numeric-failure code.
        Err(CoreError::Misuse(report)) => {
            eprintln!("{report}");
            Err(Failure::Check { code: 3, message: "finite-difference gradient checks failed".into() })
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // ------------------------------------------------------------------
    // exit-code classification
    // ------------------------------------------------------------------

    #[test]
    fn numeric_failures_exit_3_data_errors_exit_2() {
        let structure: pathformer_core::query::StructureName = "1p".parse().unwrap();
        let nonfinite = Failure::Core(CoreError::NonFiniteLoss { step: 7, structure });
        assert_eq!(exit_code(&nonfinite), 3);

        let nn = Failure::Core(CoreError::Nn(pathformer_nn::Error::NonFinite {
            context: "optimizer step".into(),
        }));
        assert_eq!(exit_code(&nn), 3);

        let failed_checks = Failure::Check { code: 3, message: "gradient checks failed".into() };
        assert_eq!(exit_code(&failed_checks), 3);

        let io = Failure::Core(CoreError::io(
            "/tmp/x",
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
        assert_eq!(exit_code(&io), 2);

        let parse = Failure::Core(CoreError::parse("queries.jsonl", 3, "bad line"));
        assert_eq!(exit_code(&parse), 2);
    }
}
