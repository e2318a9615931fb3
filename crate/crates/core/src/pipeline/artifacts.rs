//! On-disk layout of a run:
//!
//! ```text
//! {dir}/snapshots/task{t}.enc   encoder f_t
//! {dir}/indexes/task{t}.idx     I_t built with f_t
//! {dir}/ledger.json             drift records and task centroids
//! {dir}/metrics.csv             checkpoint,task,method,metric,value
//! {dir}/table.txt               rendered matrices
//! {dir}/config.toml             the configuration that produced it
//! ```
//!
//! A bench run keeps one such tree per training recipe under `ft/` and
//! `ft-kd/`, with the combined `metrics.csv`, `comparison.csv` and
//! `table.txt` at the top.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{initial_params, BenchResult, ContinualState, Method, MetricMatrices, RunConfig, RunResult};
use crate::drift::DriftLedger;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::eval::performance_drop;
use crate::index::CorpusIndex;

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_state(dir: &Path, state: &ContinualState) -> Result<()> {
    let snaps = dir.join("snapshots");
    let idx = dir.join("indexes");
    create_dir(&snaps)?;
    create_dir(&idx)?;
    for (i, p) in state.snapshots.iter().enumerate() {
        p.save(&snaps.join(format!("task{}.enc", i + 1)))?;
    }
    for (t, index) in &state.indexes {
        index.save(&idx.join(format!("task{t}.idx")))?;
    }
    state.ledger.save(&dir.join("ledger.json"))
}

/// `checkpoint,task,method,metric,value` rows, scores in full precision.
pub fn metrics_csv<'a>(runs: impl IntoIterator<Item = (Method, &'a MetricMatrices)>) -> String {
    let mut out = String::from("checkpoint,task,method,metric,value\n");
    for (method, m) in runs {
        for (name, matrix) in m.named() {
            for (c, t, v) in matrix.cells() {
                let _ = writeln!(out, "{c},{t},{method},{name},{v}");
            }
        }
    }
    out
}

fn matrices_text(method: Method, m: &MetricMatrices) -> String {
    let mut out = String::new();
    for (name, matrix) in m.named() {
        out.push_str(&matrix.render(&format!("{method} {name}@k")));
        out.push('\n');
    }
    out
}

/// Final-checkpoint scores of each method with the overall and old-task
/// averages, as CSV and as an aligned table.
fn comparison(results: &BTreeMap<Method, MetricMatrices>) -> (String, String) {
    let n = results.values().next().map_or(0, |m| m.ndcg.num_tasks());
    let mut csv = String::from("method");
    let mut text = format!("{:<16}", "Method");
    for t in 1..=n {
        let _ = write!(csv, ",task{t}");
        let _ = write!(text, "{:>8}", format!("T{t}"));
    }
    csv.push_str(",avg,old_avg,mean_pd\n");
    let _ = writeln!(text, "{:>8}{:>9}{:>9}", "Avg", "OldAvg", "PD");
    for (method, m) in results {
        let _ = write!(csv, "{method}");
        let _ = write!(text, "{:<16}", method.name());
        for t in 1..=n {
            let v = m.ndcg.get(n, t).unwrap_or(f64::NAN);
            let _ = write!(csv, ",{v}");
            let _ = write!(text, "{:>8.1}", 100.0 * v);
        }
        let avg = m.ndcg.average(n).unwrap_or(f64::NAN);
        let old = m.ndcg.old_task_average(n).unwrap_or(f64::NAN);
        let pd = performance_drop(&m.ndcg)
            .ok()
            .filter(|p| !p.per_task.is_empty())
            .map_or(f64::NAN, |p| p.per_task.values().sum::<f64>() / p.per_task.len() as f64);
        let _ = writeln!(csv, ",{avg},{old},{pd}");
        let _ = writeln!(text, "{:>8.1}{:>9.1}{:>9.1}", 100.0 * avg, 100.0 * old, 100.0 * pd);
    }
    (csv, text)
}

/// Writes a single-method run.
pub fn write_run(dir: &Path, result: &RunResult, config: &RunConfig) -> Result<()> {
    create_dir(dir)?;
    write_state(dir, &result.state)?;
    write_file(&dir.join("config.toml"), &config.to_toml())?;
    write_file(&dir.join("metrics.csv"), &metrics_csv([(result.method, &result.metrics)]))?;
    write_file(&dir.join("table.txt"), &matrices_text(result.method, &result.metrics))
}

/// Writes all bench artifacts.
pub fn write_bench(dir: &Path, bench: &BenchResult, config: &RunConfig) -> Result<()> {
    create_dir(dir)?;
    write_state(&dir.join("ft"), &bench.ft)?;
    write_state(&dir.join("ft-kd"), &bench.ft_kd)?;
    write_file(&dir.join("config.toml"), &config.to_toml())?;
    write_file(
        &dir.join("metrics.csv"),
        &metrics_csv(bench.metrics.iter().map(|(m, x)| (*m, x))),
    )?;
    let (csv, table) = comparison(&bench.metrics);
    write_file(&dir.join("comparison.csv"), &csv)?;
    let mut text = format!("nDCG@{} at the final checkpoint\n{table}\n", config.retrieval.k);
    for (method, m) in &bench.metrics {
        text.push_str(&m.ndcg.render(&format!("{method} nDCG@{}", config.retrieval.k)));
        text.push('\n');
    }
    write_file(&dir.join("table.txt"), &text)
}

/// A run's trained checkpoints, indexes and ledger, read back from disk.
#[derive(Debug, Clone)]
pub struct Archive {
    pub config: RunConfig,
    pub state: ContinualState,
}

/// Reads the tree written for one training recipe (a `train` run directory,
/// or `ft/` / `ft-kd/` of a bench run). The config is taken from `dir` or
/// its parent.
pub fn load_archive(dir: &Path) -> Result<Archive> {
    let cfg_path = [dir.join("config.toml"), dir.join("..").join("config.toml")]
        .into_iter()
        .find(|p| p.exists())
        .ok_or_else(|| Error::Config(format!("no config.toml in {} or its parent", dir.display())))?;
    let config = RunConfig::load(&cfg_path)?;
    let ledger = DriftLedger::load(&dir.join("ledger.json"))?;
    let mut snapshots = Vec::new();
    loop {
        let path = dir.join("snapshots").join(format!("task{}.enc", snapshots.len() + 1));
        if !path.exists() {
            break;
        }
        snapshots.push(EncoderParams::load(&path)?);
    }
    if snapshots.is_empty() {
        return Err(Error::MissingIndex(1));
    }
    let mut state = ContinualState::new(initial_params(&config)?, false, config.retrieval.multi_k);
    for t in 1..=snapshots.len() as u32 {
        let index = CorpusIndex::load(&dir.join("indexes").join(format!("task{t}.idx")))?;
        state.indexes.insert(t, index);
    }
    state.snapshots = snapshots;
    state.ledger = ledger;
    Ok(Archive { config, state })
}
