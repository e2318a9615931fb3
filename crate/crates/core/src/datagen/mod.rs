//! Task datasets: synthetic topic-shifting streams and BEIR-layout files.

mod beir;
#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedAliasIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::index::DocRecord;
use crate::seed::derive_seed;

pub use beir::{export_beir, load_beir_dataset, load_beir_dir};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub query_id: String,
    pub query: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestQuery {
    pub query_id: String,
    pub text: String,
}

/// Everything one task provides: training pairs, held-out queries with
/// judgments, and the corpus to index.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: u32,
    pub train_pairs: Vec<TrainPair>,
    pub queries_test: Vec<TestQuery>,
    pub corpus: Vec<DocRecord>,
    pub qrels: Qrels,
}

impl TaskDataset {
    /// Checks that every referenced document exists and every test query is
    /// judged.
    pub fn validate(&self) -> Result<()> {
        let ids: HashSet<&str> = self.corpus.iter().map(|d| d.doc_id.as_str()).collect();
        if ids.len() != self.corpus.len() {
            let mut seen = HashSet::new();
            let dup = self.corpus.iter().find(|d| !seen.insert(&d.doc_id)).unwrap();
            return Err(Error::DuplicateDocId(dup.doc_id.clone()));
        }
        for p in &self.train_pairs {
            if !ids.contains(p.doc_id.as_str()) {
                return Err(Error::DanglingReference {
                    query_id: p.query_id.clone(),
                    doc_id: p.doc_id.clone(),
                });
            }
        }
        for (q, judged) in &self.qrels {
            for doc in judged.keys() {
                if !ids.contains(doc.as_str()) {
                    return Err(Error::DanglingReference {
                        query_id: q.clone(),
                        doc_id: doc.clone(),
                    });
                }
            }
        }
        for q in &self.queries_test {
            if self.qrels.get(&q.query_id).is_none_or(|j| j.values().all(|&g| g == 0)) {
                return Err(Error::MissingQrels(q.query_id.clone()));
            }
        }
        Ok(())
    }

    /// Training documents judged relevant per training query id.
    pub fn train_relevant(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for p in &self.train_pairs {
            out.entry(&p.query_id).or_default().insert(&p.doc_id);
        }
        out
    }

    pub fn test_texts(&self) -> Vec<String> {
        self.queries_test.iter().map(|q| q.text.clone()).collect()
    }
}

/// Knobs of a synthetic stream. Each task draws from its own topic
/// vocabulary; `vocab_overlap` of it is inherited from the previous task.
/// A background vocabulary is shared by all tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSpec {
    pub num_tasks: u32,
    pub docs_per_task: usize,
    pub train_pairs_per_task: usize,
    pub test_queries_per_task: usize,
    pub vocab_size: usize,
    pub vocab_overlap: f64,
    pub doc_length: (usize, usize),
    pub query_length: (usize, usize),
    /// Size of the background vocabulary shared across tasks.
    pub background_vocab: usize,
    /// Probability that a document token is drawn from the background.
    pub background_rate: f64,
    /// Number of background tokens appended to each query.
    pub query_background: (usize, usize),
    /// Distinctive words per document; queries are drawn from these.
    pub focus_words: usize,
    /// Instruction prefixes put in front of every query and document text.
    pub query_prefix: String,
    pub doc_prefix: String,
    pub seed: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            num_tasks: 3,
            docs_per_task: 2000,
            train_pairs_per_task: 500,
            test_queries_per_task: 200,
            vocab_size: 1000,
            vocab_overlap: 0.2,
            doc_length: (30, 80),
            query_length: (3, 6),
            background_vocab: 50,
            background_rate: 0.3,
            query_background: (0, 0),
            focus_words: 8,
            query_prefix: "search_query:".into(),
            doc_prefix: "search_document:".into(),
            seed: 42,
        }
    }
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.num_tasks == 0
            || self.docs_per_task == 0
            || self.train_pairs_per_task == 0
            || self.test_queries_per_task == 0
            || self.vocab_size == 0
        {
            return fail("all counts must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.vocab_overlap) {
            return fail("vocab_overlap must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.background_rate) {
            return fail("background_rate must lie in [0, 1]");
        }
        if self.background_rate > 0.0 && self.background_vocab == 0
            || self.query_background.1 > 0 && self.background_vocab == 0
        {
            return fail("background tokens requested with an empty background vocabulary");
        }
        for (name, (lo, hi)) in [
            ("doc_length", self.doc_length),
            ("query_length", self.query_length),
            ("query_background", self.query_background),
        ] {
            if lo > hi {
                return Err(Error::InvalidSpec(format!("{name} range is reversed")));
            }
        }
        if self.doc_length.0 == 0 || self.query_length.0 == 0 {
            return fail("lengths must be at least 1");
        }
        if self.focus_words == 0 || self.focus_words > self.vocab_size {
            return fail("focus_words must lie in 1..=vocab_size");
        }
        if self.query_length.1 > self.focus_words {
            return fail("query_length exceeds focus_words");
        }
        if self.focus_words > self.doc_length.0 {
            return fail("focus_words exceeds the minimum doc length");
        }
        if self.train_pairs_per_task + self.test_queries_per_task > self.docs_per_task {
            return fail("train pairs plus test queries exceed docs_per_task");
        }
        Ok(())
    }
}

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "y"];

/// Pronounceable, collision-free spelling of a word id.
pub fn word(id: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut n = id;
    let mut out = String::new();
    for _ in 0..4 {
        let s = n % base;
        out.push_str(ONSETS[s / VOWELS.len()]);
        out.push_str(VOWELS[s % VOWELS.len()]);
        n /= base;
    }
    assert!(n == 0, "word id {id} out of range");
    out
}

/// Word ids with Zipf(1) weights over a random rank order.
struct Lexicon {
    ids: Vec<usize>,
    dist: WeightedAliasIndex<f64>,
}

impl Lexicon {
    fn zipf(mut ids: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        ids.shuffle(rng);
        let weights = (1..=ids.len()).map(|r| 1.0 / r as f64).collect();
        Self {
            ids,
            dist: WeightedAliasIndex::new(weights).expect("non-empty lexicon"),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        self.ids[self.dist.sample(rng)]
    }
}

fn topic_vocabularies(spec: &StreamSpec) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0, "vocab"));
    let mut next_id = spec.background_vocab;
    let shared = (spec.vocab_overlap * spec.vocab_size as f64).round() as usize;
    let mut out: Vec<Vec<usize>> = Vec::new();
    for t in 0..spec.num_tasks as usize {
        let mut vocab = match t {
            0 => Vec::new(),
            _ => out[t - 1].choose_multiple(&mut rng, shared).copied().collect(),
        };
        while vocab.len() < spec.vocab_size {
            vocab.push(next_id);
            next_id += 1;
        }
        vocab.sort_unstable();
        out.push(vocab);
    }
    out
}

fn prefixed(prefix: &str, body: String) -> String {
    match prefix {
        "" => body,
        p => format!("{p} {body}"),
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

fn generate_task(spec: &StreamSpec, task: u32, vocab: &[usize]) -> TaskDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, task, "generate"));
    let topic = Lexicon::zipf(vocab.to_vec(), &mut rng);
    let background =
        (spec.background_vocab > 0).then(|| Lexicon::zipf((0..spec.background_vocab).collect(), &mut rng));

    let mut corpus = Vec::with_capacity(spec.docs_per_task);
    let mut focus_of = Vec::with_capacity(spec.docs_per_task);
    for i in 0..spec.docs_per_task {
        let focus: Vec<usize> = vocab.choose_multiple(&mut rng, spec.focus_words).copied().collect();
        let len = sample_range(&mut rng, spec.doc_length);
        let mut tokens = focus.clone();
        while tokens.len() < len {
            let id = match &background {
                Some(bg) if rng.gen_bool(spec.background_rate) => bg.sample(&mut rng),
                _ if rng.gen_bool(0.5) => focus[rng.gen_range(0..focus.len())],
                _ => topic.sample(&mut rng),
            };
            tokens.push(id);
        }
        tokens.shuffle(&mut rng);
        let text: Vec<String> = tokens.iter().map(|&id| word(id)).collect();
        corpus.push(DocRecord::new(
            format!("t{task}-d{i:05}"),
            "",
            prefixed(&spec.doc_prefix, text.join(" ")),
        ));
        focus_of.push(focus);
    }

    let make_query = |doc: usize, rng: &mut ChaCha8Rng| {
        let len = sample_range(rng, spec.query_length);
        let mut ids: Vec<usize> = focus_of[doc].choose_multiple(rng, len).copied().collect();
        if let Some(bg) = &background {
            for _ in 0..sample_range(rng, spec.query_background) {
                ids.push(bg.sample(rng));
            }
            ids.shuffle(rng);
        }
        prefixed(
            &spec.query_prefix,
            ids.iter().map(|&id| word(id)).collect::<Vec<_>>().join(" "),
        )
    };

    // train and test queries target disjoint documents
    let mut order: Vec<usize> = (0..spec.docs_per_task).collect();
    order.shuffle(&mut rng);
    let (train_docs, rest) = order.split_at(spec.train_pairs_per_task);
    let test_docs = &rest[..spec.test_queries_per_task];

    let train_pairs = train_docs
        .iter()
        .enumerate()
        .map(|(i, &d)| TrainPair {
            query_id: format!("t{task}-train{i:05}"),
            query: make_query(d, &mut rng),
            doc_id: corpus[d].doc_id.clone(),
        })
        .collect();
    let mut queries_test = Vec::with_capacity(test_docs.len());
    let mut qrels = Qrels::new();
    for (i, &d) in test_docs.iter().enumerate() {
        let query_id = format!("t{task}-q{i:05}");
        queries_test.push(TestQuery {
            query_id: query_id.clone(),
            text: make_query(d, &mut rng),
        });
        qrels.insert(query_id, BTreeMap::from([(corpus[d].doc_id.clone(), 1)]));
    }
    TaskDataset {
        task_id: task,
        train_pairs,
        queries_test,
        corpus,
        qrels,
    }
}

/// Builds the whole stream; bit-identical for equal specs.
pub fn generate_task_stream(spec: &StreamSpec) -> Result<Vec<TaskDataset>> {
    spec.validate()?;
    let vocabs = topic_vocabularies(spec);
    Ok(vocabs
        .iter()
        .enumerate()
        .map(|(t, v)| generate_task(spec, t as u32 + 1, v))
        .collect())
}

/// Topic vocabulary of every task, as word strings.
pub fn topic_words(spec: &StreamSpec) -> Result<Vec<BTreeSet<String>>> {
    spec.validate()?;
    Ok(topic_vocabularies(spec)
        .into_iter()
        .map(|v| v.into_iter().map(word).collect())
        .collect())
}
