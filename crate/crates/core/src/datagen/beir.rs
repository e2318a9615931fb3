use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TaskDataset, TestQuery, TrainPair};
use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::index::DocRecord;

#[derive(Serialize, Deserialize)]
struct QueryLine {
    #[serde(rename = "_id")]
    id: String,
    text: String,
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)> + '_> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| Error::io(path, e))))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty())))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (line, text) in lines(path)? {
        let record = serde_json::from_str(&text?).map_err(|e| Error::Parse {
            path: path.into(),
            line,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// `query-id<TAB>corpus-id<TAB>score`, with an optional header line.
pub(crate) fn read_qrels(path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (line, text) in lines(path)? {
        let text = text?;
        let fields: Vec<&str> = text.trim_end_matches('\r').split('\t').collect();
        if line == 1 && fields.first() == Some(&"query-id") {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.into(),
            line,
            reason,
        };
        let [q, d, s] = fields[..] else {
            return Err(parse_err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let grade: u32 = s
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad relevance grade {s:?}")))?;
        qrels.entry(q.to_string()).or_default().insert(d.to_string(), grade);
    }
    Ok(qrels)
}

/// Loads one task from BEIR files. Without a train-split qrels file the
/// training pairs are taken from the test judgments.
pub fn load_beir_dataset(
    task_id: u32,
    corpus_path: &Path,
    queries_path: &Path,
    qrels_path: &Path,
    train_qrels_path: Option<&Path>,
) -> Result<TaskDataset> {
    let corpus: Vec<DocRecord> = read_jsonl(corpus_path)?;
    let texts: BTreeMap<String, String> = read_jsonl::<QueryLine>(queries_path)?
        .into_iter()
        .map(|q| (q.id, q.text))
        .collect();
    let qrels = read_qrels(qrels_path)?;
    let train = match train_qrels_path {
        Some(p) => read_qrels(p)?,
        None => qrels.clone(),
    };

    let ids: HashSet<&str> = corpus.iter().map(|d| d.doc_id.as_str()).collect();
    for (q, judged) in qrels.iter().chain(&train) {
        if let Some(d) = judged.keys().find(|d| !ids.contains(d.as_str())) {
            return Err(Error::DanglingReference {
                query_id: q.clone(),
                doc_id: d.clone(),
            });
        }
    }
    let text_of = |q: &str| {
        texts
            .get(q)
            .cloned()
            .ok_or_else(|| Error::DataMismatch(format!("query {q:?} has judgments but no text")))
    };

    let mut train_pairs = Vec::new();
    for (q, judged) in &train {
        for (d, _) in judged.iter().filter(|(_, &g)| g > 0) {
            train_pairs.push(TrainPair {
                query_id: q.clone(),
                query: text_of(q)?,
                doc_id: d.clone(),
            });
        }
    }
    let mut queries_test = Vec::new();
    for (q, judged) in &qrels {
        if judged.values().any(|&g| g > 0) {
            queries_test.push(TestQuery {
                query_id: q.clone(),
                text: text_of(q)?,
            });
        }
    }
    let qrels = qrels
        .into_iter()
        .filter(|(_, j)| j.values().any(|&g| g > 0))
        .collect();
    let ds = TaskDataset {
        task_id,
        train_pairs,
        queries_test,
        corpus,
        qrels,
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads `corpus.jsonl`, `queries.jsonl`, `qrels/test.tsv` and, when
/// present, `qrels/train.tsv` from a directory.
pub fn load_beir_dir(dir: &Path, task_id: u32) -> Result<TaskDataset> {
    let train = dir.join("qrels").join("train.tsv");
    load_beir_dataset(
        task_id,
        &dir.join("corpus.jsonl"),
        &dir.join("queries.jsonl"),
        &dir.join("qrels").join("test.tsv"),
        train.exists().then_some(train.as_path()),
    )
}

fn write_qrels<'a>(path: &Path, rows: impl Iterator<Item = (&'a str, &'a str, u32)>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("query-id\tcorpus-id\tscore\n");
    for (q, d, g) in rows {
        body.push_str(&format!("{q}\t{d}\t{g}\n"));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Writes a dataset in the layout read by [`load_beir_dir`].
pub fn export_beir(ds: &TaskDataset, dir: &Path) -> Result<()> {
    let qrels_dir = dir.join("qrels");
    fs::create_dir_all(&qrels_dir).map_err(|e| Error::io(&qrels_dir, e))?;

    let write_jsonl = |path: &Path, rows: Vec<String>| -> Result<()> {
        let mut body = rows.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))
    };
    let docs = ds
        .corpus
        .iter()
        .map(serde_json::to_string)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    write_jsonl(&dir.join("corpus.jsonl"), docs)?;

    let mut queries: BTreeMap<&str, &str> = BTreeMap::new();
    for p in &ds.train_pairs {
        queries.insert(&p.query_id, &p.query);
    }
    for q in &ds.queries_test {
        queries.insert(&q.query_id, &q.text);
    }
    let queries = queries
        .into_iter()
        .map(|(id, text)| {
            serde_json::to_string(&QueryLine {
                id: id.to_string(),
                text: text.to_string(),
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    write_jsonl(&dir.join("queries.jsonl"), queries)?;

    write_qrels(
        &qrels_dir.join("test.tsv"),
        ds.qrels
            .iter()
            .flat_map(|(q, j)| j.iter().map(move |(d, &g)| (q.as_str(), d.as_str(), g))),
    )?;
    write_qrels(
        &qrels_dir.join("train.tsv"),
        ds.train_pairs
            .iter()
            .map(|p| (p.query_id.as_str(), p.doc_id.as_str(), 1)),
    )
}
