//! Continual fine-tuning over a task stream: mining, training, indexing,
//! drift bookkeeping and evaluation under each retrieval strategy.

mod artifacts;
mod config;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{TaskDataset, TestQuery};
use crate::drift::{
    estimate_drift, estimate_multi_drift, task_centroid, update_task_centroids, DriftLedger, DriftRecord,
};
use crate::embedding::{dot, Embedding};
use crate::encoder::{accumulate_contrastive, accumulate_distill, sgd_step, EncoderParams, GradientSet, TokenFeatures};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, ScoreMatrix};
use crate::index::{build_index, CorpusIndex, RankedList};
use crate::seed::derive_seed;

pub use artifacts::{load_archive, metrics_csv, write_bench, write_run, Archive};
pub use config::{DataConfig, EncoderConfig, Method, RetrievalConfig, RunConfig, Strategy, TrainConfig};

/// Caps rayon's global pool at `QDC_THREADS` when set. Later calls are no-ops.
pub fn configure_threads() {
    if let Some(n) = std::env::var("QDC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Task datasets named by the config: its BEIR directories when given,
/// otherwise the synthetic stream.
pub fn load_datasets(config: &RunConfig) -> Result<Vec<TaskDataset>> {
    if config.data.beir.is_empty() {
        return crate::datagen::generate_task_stream(&config.stream_spec());
    }
    config
        .data
        .beir
        .iter()
        .enumerate()
        .map(|(i, dir)| crate::datagen::load_beir_dir(dir, i as u32 + 1))
        .collect()
}

/// The pre-trained starting point `f_0`.
pub fn initial_params(config: &RunConfig) -> Result<EncoderParams> {
    let e = &config.encoder;
    EncoderParams::random(e.vocab, e.dim, e.temperature, derive_seed(config.seed, 0, "init"))
}

/// Training state after some prefix of the stream.
#[derive(Debug, Clone)]
pub struct ContinualState {
    /// `f_1 .. f_t`; empty before the first task.
    pub snapshots: Vec<EncoderParams>,
    initial: EncoderParams,
    /// `I_z` built with `f_z`, for every trained task `z`.
    pub indexes: BTreeMap<u32, CorpusIndex>,
    pub ledger: DriftLedger,
    pub kd: bool,
    pub multi_k: usize,
}

impl ContinualState {
    pub fn new(initial: EncoderParams, kd: bool, multi_k: usize) -> Self {
        Self {
            snapshots: Vec::new(),
            initial,
            indexes: BTreeMap::new(),
            ledger: DriftLedger::new(),
            kd,
            multi_k,
        }
    }

    /// Current model `f_t` (or `f_0` before any training).
    pub fn params(&self) -> &EncoderParams {
        self.snapshots.last().unwrap_or(&self.initial)
    }

    /// Number of tasks trained so far.
    pub fn task(&self) -> u32 {
        self.snapshots.len() as u32
    }

    /// `f_t` for checkpoint `t`, with `f_0` at 0.
    pub fn checkpoint(&self, t: u32) -> Option<&EncoderParams> {
        match t {
            0 => Some(&self.initial),
            _ => self.snapshots.get(t as usize - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRun {
    pub evaluated_task: u32,
    pub checkpoint_task: u32,
    pub lists: BTreeMap<String, RankedList>,
}

fn features_of(texts: impl IntoParallelIterator<Item = String>, vocab: usize) -> Vec<TokenFeatures> {
    texts
        .into_par_iter()
        .map(|t| crate::encoder::tokenize(&t, vocab))
        .collect()
}

fn encode_rows(params: &EncoderParams, feats: &[TokenFeatures]) -> Result<Vec<Embedding>> {
    feats.par_iter().map(|f| params.encode(f)).collect()
}

/// Top-`h` most similar corpus documents for every training pair under
/// `params`, skipping the pair's positive and anything else judged relevant
/// to its query. Equal similarities go to the smaller doc id.
pub fn mine_hard_negatives(params: &EncoderParams, data: &TaskDataset, h: usize) -> Result<Vec<Vec<String>>> {
    if h == 0 {
        return Ok(vec![Vec::new(); data.train_pairs.len()]);
    }
    let vocab = params.vocab();
    let docs = encode_rows(params, &features_of(data.corpus.par_iter().map(|d| d.full_text()), vocab))?;
    let relevant = data.train_relevant();
    data.train_pairs
        .par_iter()
        .map(|pair| {
            let q = params.encode_text(&pair.query)?;
            let skip = &relevant[pair.query_id.as_str()];
            let mut scored: Vec<(f64, &str)> = data
                .corpus
                .iter()
                .zip(&docs)
                .filter(|(d, _)| d.doc_id != pair.doc_id && !skip.contains(d.doc_id.as_str()))
                .map(|(d, e)| (dot(q.values(), e.values()), d.doc_id.as_str()))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            Ok(scored.into_iter().take(h).map(|(_, id)| id.to_string()).collect())
        })
        .collect()
}

/// Tokenized training pairs with hard negatives as corpus positions.
struct Prepared {
    queries: Vec<TokenFeatures>,
    positives: Vec<usize>,
    negatives: Vec<Vec<usize>>,
    docs: Vec<TokenFeatures>,
}

fn prepare(data: &TaskDataset, negatives: &[Vec<String>], vocab: usize) -> Result<Prepared> {
    let pos: HashMap<&str, usize> = data
        .corpus
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i))
        .collect();
    let lookup = |id: &str| {
        pos.get(id)
            .copied()
            .ok_or_else(|| Error::DataMismatch(format!("document {id:?} not in task {} corpus", data.task_id)))
    };
    Ok(Prepared {
        queries: features_of(data.train_pairs.par_iter().map(|p| p.query.clone()), vocab),
        positives: data.train_pairs.iter().map(|p| lookup(&p.doc_id)).collect::<Result<_>>()?,
        negatives: negatives
            .iter()
            .map(|list| list.iter().map(|id| lookup(id)).collect::<Result<_>>())
            .collect::<Result<_>>()?,
        docs: features_of(data.corpus.par_iter().map(|d| d.full_text()), vocab),
    })
}

/// One SGD step on `L_C` (plus `L_D` toward `teacher` when given).
fn train_step(
    params: &EncoderParams,
    teacher: Option<&EncoderParams>,
    prep: &[&Prepared],
    batch: &[(usize, usize)],
    train: &TrainConfig,
) -> Result<EncoderParams> {
    let pairs: Vec<(&TokenFeatures, &TokenFeatures)> = batch
        .iter()
        .map(|&(s, i)| (&prep[s].queries[i], &prep[s].docs[prep[s].positives[i]]))
        .collect();
    let negs: Vec<Vec<&TokenFeatures>> = batch
        .iter()
        .map(|&(s, i)| prep[s].negatives[i].iter().map(|&j| &prep[s].docs[j]).collect())
        .collect();
    let mut grads = GradientSet::zeros_like(params);
    let loss = accumulate_contrastive(params, &pairs, &negs, &mut grads)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("contrastive loss".into()));
    }
    if let Some(old) = teacher {
        let kd = accumulate_distill(params, old, &pairs, &mut grads)?;
        if !kd.is_finite() {
            return Err(Error::NonFinite("distillation loss".into()));
        }
    }
    sgd_step(params, &grads, train.lr, train.weight_decay)
}

/// Runs the configured epochs over `(source, pair)` positions in a seeded
/// shuffle; the last partial batch is kept.
fn train_epochs(
    start: &EncoderParams,
    teacher: Option<&EncoderParams>,
    prep: &[&Prepared],
    shuffle_seed: u64,
    train: &TrainConfig,
) -> Result<EncoderParams> {
    let mut order: Vec<(usize, usize)> = prep
        .iter()
        .enumerate()
        .flat_map(|(s, p)| (0..p.queries.len()).map(move |i| (s, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut params = start.clone();
    for _ in 0..train.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(train.batch_size) {
            params = train_step(&params, teacher, prep, batch, train)?;
        }
    }
    Ok(params)
}

fn drift_sample(queries: &[TokenFeatures], cap: usize, seed: u64) -> Vec<TokenFeatures> {
    if queries.len() <= cap {
        return queries.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, queries.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| queries[i].clone()).collect()
}

/// Learns task `data.task_id` on top of `state`: mines negatives with the
/// pre-task model, trains `f_t` from `f_{t-1}`, records the drift of the
/// transition, stores the task centroid and indexes the corpus with `f_t`.
pub fn train_task(mut state: ContinualState, data: &TaskDataset, config: &RunConfig) -> Result<ContinualState> {
    let t = state.task() + 1;
    if data.task_id != t {
        return Err(Error::DataMismatch(format!(
            "expected task {t}, got task {}",
            data.task_id
        )));
    }
    data.validate()?;
    if data.train_pairs.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let old = state.params().clone();
    let negatives = mine_hard_negatives(&old, data, config.train.hard_negatives)?;
    let prep = prepare(data, &negatives, old.vocab())?;
    let teacher = (state.kd && t > 1).then_some(&old);
    let start = old.clone().with_version(t);
    let new = train_epochs(&start, teacher, &[&prep], derive_seed(config.seed, t, "shuffle"), &config.train)?;

    let sample = drift_sample(&prep.queries, config.train.drift_sample_cap, derive_seed(config.seed, t, "drift"));
    if t > 1 {
        let delta = estimate_drift(&new, &old, &sample)?;
        let record = if state.multi_k > 1 {
            DriftRecord::Multi(estimate_multi_drift(
                &new,
                &old,
                &sample,
                state.multi_k,
                derive_seed(config.seed, t, "kmeans"),
            )?)
        } else {
            DriftRecord::Single(delta.clone())
        };
        let mut ledger = update_task_centroids(&state.ledger, &delta)?;
        ledger.push(record)?;
        state.ledger = ledger;
    }
    state.ledger.set_task_centroid(t, task_centroid(&new, &sample)?);
    state.indexes.insert(t, build_index(&new, &data.corpus, t)?);
    state.snapshots.push(new);
    Ok(state)
}

fn search_all(index: &CorpusIndex, queries: &[TestQuery], embs: Vec<Embedding>, k: usize) -> Result<BTreeMap<String, RankedList>> {
    let lists = index.search_batch(&embs, k)?;
    Ok(queries.iter().map(|q| q.query_id.clone()).zip(lists).collect())
}

/// Retrieval for task `t_prime`'s test queries at checkpoint `t`.
///
/// `plain` searches `I_{t'}` with `f_t(q)`; `qdc` first maps the query back
/// with the ledger; `reindex` searches a fresh index of `data.corpus` built
/// with `f_t`.
pub fn retrieve_at(
    state: &ContinualState,
    t: u32,
    data: &TaskDataset,
    strategy: Strategy,
    k: usize,
) -> Result<RetrievalRun> {
    let t_prime = data.task_id;
    if t_prime == 0 || t_prime > t {
        return Err(Error::DataMismatch(format!(
            "task {t_prime} is not learned at checkpoint {t}"
        )));
    }
    let params = state.checkpoint(t).ok_or(Error::MissingIndex(t))?;
    let feats = features_of(data.queries_test.par_iter().map(|q| q.text.clone()), params.vocab());
    let embs = encode_rows(params, &feats)?;
    let rebuilt;
    let (index, embs) = match strategy {
        Strategy::Reindex if t_prime != t => {
            rebuilt = build_index(params, &data.corpus, t_prime)?;
            (&rebuilt, embs)
        }
        Strategy::Qdc if t_prime != t => {
            let idx = state.indexes.get(&t_prime).ok_or(Error::MissingIndex(t_prime))?;
            let comp = embs
                .par_iter()
                .map(|q| state.ledger.compensate(q, t_prime, t))
                .collect::<Result<Vec<_>>>()?;
            (idx, comp)
        }
        _ => (state.indexes.get(&t_prime).ok_or(Error::MissingIndex(t_prime))?, embs),
    };
    Ok(RetrievalRun {
        evaluated_task: t_prime,
        checkpoint_task: t,
        lists: search_all(index, &data.queries_test, embs, k)?,
    })
}

/// [`retrieve_at`] at the latest checkpoint.
pub fn retrieve_eval(state: &ContinualState, data: &TaskDataset, strategy: Strategy, k: usize) -> Result<RetrievalRun> {
    retrieve_at(state, state.task(), data, strategy, k)
}

/// Zero-shot retrieval for a task not yet learned: queries and corpus both
/// encoded with the checkpoint model.
pub fn retrieve_zero_shot(params: &EncoderParams, data: &TaskDataset, k: usize) -> Result<RetrievalRun> {
    let index = build_index(params, &data.corpus, data.task_id)?;
    let feats = features_of(data.queries_test.par_iter().map(|q| q.text.clone()), params.vocab());
    let embs = encode_rows(params, &feats)?;
    Ok(RetrievalRun {
        evaluated_task: data.task_id,
        checkpoint_task: params.version(),
        lists: search_all(&index, &data.queries_test, embs, k)?,
    })
}

/// nDCG, Recall and MAP at `k` for every (checkpoint, task) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrices {
    pub ndcg: ScoreMatrix,
    pub recall: ScoreMatrix,
    pub map: ScoreMatrix,
}

impl MetricMatrices {
    fn new(n: u32) -> Self {
        Self {
            ndcg: ScoreMatrix::new(n),
            recall: ScoreMatrix::new(n),
            map: ScoreMatrix::new(n),
        }
    }

    fn set(&mut self, t: u32, task: u32, run: &RetrievalRun, data: &TaskDataset, k: usize) -> Result<()> {
        let m = compute_metrics(&run.lists, &data.qrels, k)?.mean;
        self.ndcg.set(t, task, m.ndcg);
        self.recall.set(t, task, m.recall);
        self.map.set(t, task, m.map);
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, &ScoreMatrix); 3] {
        [("ndcg", &self.ndcg), ("recall", &self.recall), ("map", &self.map)]
    }
}

/// Evaluates every task at every checkpoint of `state` under each strategy.
/// Future tasks are scored zero-shot, identically for all strategies.
pub fn evaluate_state(
    state: &ContinualState,
    datasets: &[TaskDataset],
    strategies: &[Strategy],
    k: usize,
) -> Result<BTreeMap<Strategy, MetricMatrices>> {
    let n = datasets.len() as u32;
    let mut out: BTreeMap<Strategy, MetricMatrices> =
        strategies.iter().map(|&s| (s, MetricMatrices::new(n))).collect();
    for t in 1..=state.task() {
        let params = state.checkpoint(t).expect("trained checkpoint");
        for data in datasets {
            let u = data.task_id;
            if u > t {
                let run = retrieve_zero_shot(params, data, k)?;
                for m in out.values_mut() {
                    m.set(t, u, &run, data, k)?;
                }
                continue;
            }
            for (&s, m) in out.iter_mut() {
                let run = retrieve_at(state, t, data, s, k)?;
                m.set(t, u, &run, data, k)?;
            }
        }
    }
    Ok(out)
}

fn check_stream(datasets: &[TaskDataset]) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::DataMismatch("no datasets".into()));
    }
    for (i, d) in datasets.iter().enumerate() {
        if d.task_id != i as u32 + 1 {
            return Err(Error::DataMismatch(format!(
                "dataset {i} carries task id {}",
                d.task_id
            )));
        }
    }
    Ok(())
}

/// Trains one trajectory (with or without distillation) over the stream.
pub fn train_stream(datasets: &[TaskDataset], kd: bool, config: &RunConfig) -> Result<ContinualState> {
    check_stream(datasets)?;
    let mut state = ContinualState::new(initial_params(config)?, kd, config.retrieval.multi_k);
    for data in datasets {
        state = train_task(state, data, config)?;
    }
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub metrics: MetricMatrices,
    pub state: ContinualState,
}

/// Trains and evaluates a single method over the stream.
pub fn run_continual(datasets: &[TaskDataset], method: Method, config: &RunConfig) -> Result<RunResult> {
    let state = train_stream(datasets, method.kd(), config)?;
    let mut metrics = evaluate_state(&state, datasets, &[method.strategy()], config.retrieval.k)?;
    Ok(RunResult {
        method,
        metrics: metrics.remove(&method.strategy()).expect("evaluated strategy"),
        state,
    })
}

/// All six methods. Methods sharing a training recipe share one trajectory,
/// since the retrieval strategy never feeds back into training.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub metrics: BTreeMap<Method, MetricMatrices>,
    pub ft: ContinualState,
    pub ft_kd: ContinualState,
}

pub fn run_bench(datasets: &[TaskDataset], config: &RunConfig) -> Result<BenchResult> {
    let strategies = [Strategy::Plain, Strategy::Qdc, Strategy::Reindex];
    let mut metrics = BTreeMap::new();
    let mut states = Vec::new();
    for kd in [false, true] {
        let state = train_stream(datasets, kd, config)?;
        for (s, m) in evaluate_state(&state, datasets, &strategies, config.retrieval.k)? {
            metrics.insert(Method::from_parts(kd, s), m);
        }
        states.push(state);
    }
    let ft_kd = states.pop().unwrap();
    let ft = states.pop().unwrap();
    Ok(BenchResult { metrics, ft, ft_kd })
}

/// One model on the union of all tasks' training pairs, hard negatives mined
/// per task with `f_0`. The union is ordered by task before the seeded
/// shuffle, so the order of `datasets` does not matter.
pub fn joint_train(datasets: &[TaskDataset], config: &RunConfig) -> Result<(EncoderParams, BTreeMap<u32, CorpusIndex>)> {
    if datasets.is_empty() {
        return Err(Error::DataMismatch("no datasets".into()));
    }
    let mut ordered: Vec<&TaskDataset> = datasets.iter().collect();
    ordered.sort_by_key(|d| d.task_id);
    let init = initial_params(config)?;
    let prepared = ordered
        .iter()
        .map(|d| {
            d.validate()?;
            let negs = mine_hard_negatives(&init, d, config.train.hard_negatives)?;
            prepare(d, &negs, init.vocab())
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Prepared> = prepared.iter().collect();
    let first = ordered[0].task_id;
    let start = init.with_version(first);
    let params = train_epochs(&start, None, &refs, derive_seed(config.seed, first, "shuffle"), &config.train)?;
    let indexes = ordered
        .iter()
        .map(|d| Ok((d.task_id, build_index(&params, &d.corpus, d.task_id)?)))
        .collect::<Result<_>>()?;
    Ok((params, indexes))
}

/// Per-task scores of a jointly trained model.
pub fn evaluate_joint(
    params: &EncoderParams,
    indexes: &BTreeMap<u32, CorpusIndex>,
    datasets: &[TaskDataset],
    k: usize,
) -> Result<BTreeMap<u32, f64>> {
    datasets
        .iter()
        .map(|d| {
            let index = indexes.get(&d.task_id).ok_or(Error::MissingIndex(d.task_id))?;
            let feats = features_of(d.queries_test.par_iter().map(|q| q.text.clone()), params.vocab());
            let lists = search_all(index, &d.queries_test, encode_rows(params, &feats)?, k)?;
            Ok((d.task_id, compute_metrics(&lists, &d.qrels, k)?.mean.ndcg))
        })
        .collect()
}
