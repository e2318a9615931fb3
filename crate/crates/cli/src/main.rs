use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qdc_core::datagen::export_beir;
use qdc_core::encoder::{grad_check, LossKind};
use qdc_core::eval::drift_report;
use qdc_core::pipeline::{
    configure_threads, evaluate_state, load_archive, load_datasets, metrics_csv, run_bench, run_continual,
    write_bench, write_run, Method, RunConfig, Strategy,
};

#[derive(Parser)]
#[command(name = "qdc", version, about = "Continual dense retrieval with query drift compensation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// FT, FT+KD, FT+QDC, FT+KD+QDC, FT+REINDEX or FT+KD+REINDEX
    #[arg(long)]
    method: Option<Method>,
    /// Retrieval depth
    #[arg(long)]
    k: Option<usize>,
    /// Drift vectors per transition
    #[arg(long = "multi-k")]
    multi_k: Option<usize>,
    /// Output root directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(k) = self.k {
            cfg.retrieval.k = k;
        }
        if let Some(k) = self.multi_k {
            cfg.retrieval.multi_k = k;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Plain,
    Qdc,
    Reindex,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Plain => Strategy::Plain,
            StrategyArg::Qdc => Strategy::Qdc,
            StrategyArg::Reindex => Strategy::Reindex,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic stream as BEIR directories
    GenData(Common),
    /// Train one method over the stream and persist its artifacts
    Train(Common),
    /// Train and evaluate all six methods
    Bench(Common),
    /// Ad-hoc search against a stored run
    Retrieve {
        /// Run directory (a train run, or ft/ or ft-kd/ of a bench run)
        #[arg(long)]
        run: PathBuf,
        /// Task whose index is searched
        #[arg(long)]
        task: u32,
        #[arg(long, value_enum, default_value = "qdc")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Query text
        query: String,
    },
    /// Recompute the metric matrix of a stored run without retraining
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "qdc")]
        strategy: StrategyArg,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Drift by text length between two checkpoints of a stored run, as CSV
    DriftReport {
        #[arg(long)]
        run: PathBuf,
        /// Older checkpoint
        #[arg(long)]
        from: u32,
        /// Newer checkpoint
        #[arg(long)]
        to: u32,
        /// Task whose queries and corpus are measured (defaults to --from)
        #[arg(long)]
        task: Option<u32>,
    },
    /// Check analytic gradients of both losses against finite differences
    GradCheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = common.load()?;
            let dir = cfg.run_dir().join("data");
            for ds in load_datasets(&cfg)? {
                let task_dir = dir.join(format!("task{}", ds.task_id));
                export_beir(&ds, &task_dir)?;
                println!(
                    "{}: {} docs, {} train pairs, {} test queries",
                    task_dir.display(),
                    ds.corpus.len(),
                    ds.train_pairs.len(),
                    ds.queries_test.len()
                );
            }
        }
        Command::Train(common) => {
            let cfg = common.load()?;
            let data = load_datasets(&cfg)?;
            let result = run_continual(&data, cfg.method, &cfg)?;
            write_run(&cfg.run_dir(), &result, &cfg)?;
            print!("{}", result.metrics.ndcg.render(&format!("{} nDCG@{}", cfg.method, cfg.retrieval.k)));
            println!("artifacts in {}", cfg.run_dir().display());
        }
        Command::Bench(common) => {
            let cfg = common.load()?;
            let data = load_datasets(&cfg)?;
            let bench = run_bench(&data, &cfg)?;
            write_bench(&cfg.run_dir(), &bench, &cfg)?;
            let table = std::fs::read_to_string(cfg.run_dir().join("table.txt"))?;
            print!("{table}");
            println!("artifacts in {}", cfg.run_dir().display());
        }
        Command::Retrieve {
            run,
            task,
            strategy,
            k,
            query,
        } => {
            let archive = load_archive(&run)?;
            let state = &archive.state;
            let t = state.task();
            if task == 0 || task > t {
                bail!("task {task} is not part of this run (tasks 1..={t})");
            }
            let q = state.params().encode_text(&query)?;
            let hits = match Strategy::from(strategy) {
                Strategy::Plain => state.indexes[&task].search_topk(&q, k)?,
                Strategy::Qdc => state.indexes[&task].search_topk(&state.ledger.compensate(&q, task, t)?, k)?,
                Strategy::Reindex => {
                    let data = load_datasets(&archive.config)?;
                    let corpus = &data
                        .get(task as usize - 1)
                        .context("dataset for task missing")?
                        .corpus;
                    qdc_core::index::build_index(state.params(), corpus, task)?.search_topk(&q, k)?
                }
            };
            for (rank, hit) in hits.entries.iter().enumerate() {
                println!("{}\t{}\t{:.6}", rank + 1, hit.doc_id, hit.score);
            }
        }
        Command::Eval { run, strategy, k } => {
            let archive = load_archive(&run)?;
            let data = load_datasets(&archive.config)?;
            let k = k.unwrap_or(archive.config.retrieval.k);
            let s = Strategy::from(strategy);
            let m = evaluate_state(&archive.state, &data, &[s], k)?.remove(&s).expect("strategy evaluated");
            let method = Method::from_parts(archive.config.method.kd(), s);
            print!("{}", metrics_csv([(method, &m)]));
            eprint!("{}", m.ndcg.render(&format!("{method} nDCG@{k}")));
        }
        Command::DriftReport { run, from, to, task } => {
            let archive = load_archive(&run)?;
            let state = &archive.state;
            let old = state.checkpoint(from).context("unknown --from checkpoint")?;
            let new = state.checkpoint(to).context("unknown --to checkpoint")?;
            let task = task.unwrap_or(from.max(1));
            let data = load_datasets(&archive.config)?;
            let ds = data.get(task as usize - 1).context("unknown --task")?;
            let report = drift_report(new, old, &ds.test_texts(), &ds.corpus)?;
            let csv = report.to_csv();
            print!("{csv}");
            write_text(&run.join(format!("drift_{from}_{to}_task{task}.csv")), &csv)?;
        }
        Command::GradCheck { seeds } => {
            let mut worst: f64 = 0.0;
            for kind in [LossKind::Contrastive, LossKind::Distill] {
                for seed in 0..seeds {
                    let err = grad_check(kind, seed)?;
                    println!("{kind:?}\tseed {seed}\tmax rel err {err:.3e}");
                    worst = worst.max(err);
                }
            }
            if worst > 1e-4 {
                bail!("gradient check failed: max relative error {worst:.3e} > 1e-4");
            }
            println!("ok: max relative error {worst:.3e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    configure_threads();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
