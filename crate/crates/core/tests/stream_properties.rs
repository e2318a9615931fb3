use std::path::Path;

use qdc_core::drift::{accumulate_drift, compensate_query, predict_task_id};
use qdc_core::embedding::cosine_sim;
use qdc_core::eval::drift_report;
use qdc_core::pipeline::{load_datasets, train_stream, RunConfig};

fn shipped(seed: u64) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../default.cfg");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.seed = seed;
    cfg
}

#[test]
fn compensation_moves_old_queries_toward_their_original_embedding() {
    let cfg = shipped(0);
    let data = load_datasets(&cfg).unwrap();
    let state = train_stream(&data, false, &cfg).unwrap();
    let (f1, f3) = (state.checkpoint(1).unwrap(), state.checkpoint(3).unwrap());
    let delta = accumulate_drift(&state.ledger, 1, 3).unwrap();
    let (mut plain, mut comp) = (0.0, 0.0);
    let queries = &data[0].queries_test;
    assert_eq!(queries.len(), 200);
    for q in queries {
        let truth = f1.encode_text(&q.text).unwrap();
        let now = f3.encode_text(&q.text).unwrap();
        plain += cosine_sim(&now, &truth).unwrap();
        comp += cosine_sim(&compensate_query(&now, &delta).unwrap(), &truth).unwrap();
    }
    let n = queries.len() as f64;
    assert!(comp / n > plain / n, "compensated {} vs plain {}", comp / n, plain / n);
}

#[test]
fn task_id_prediction_on_disjoint_topics() {
    let mut cfg = shipped(42);
    // compact, disjoint topic vocabularies; with 1000 words per topic the
    // task centroids of a hashed bag-of-words encoder barely separate
    cfg.data.synthetic.vocab_overlap = 0.0;
    cfg.data.synthetic.vocab_size = 50;
    let data = load_datasets(&cfg).unwrap();
    let state = train_stream(&data, false, &cfg).unwrap();
    let mut correct = 0;
    let mut total = 0;
    for ds in &data {
        for q in ds.queries_test.iter().take(100) {
            let emb = state.params().encode_text(&q.text).unwrap();
            correct += usize::from(predict_task_id(&emb, &state.ledger).unwrap() == ds.task_id);
            total += 1;
        }
    }
    let acc = correct as f64 / total as f64;
    assert_eq!(total, 300);
    assert!(acc >= 0.9, "accuracy {acc}");
}

#[test]
fn drift_report_matches_a_per_item_loop() {
    let cfg = shipped(42);
    let data = load_datasets(&cfg).unwrap();
    let state = train_stream(&data[..2], false, &cfg).unwrap();
    let (old, new) = (state.checkpoint(1).unwrap(), state.checkpoint(2).unwrap());
    let ds = &data[1];
    let queries = ds.test_texts();
    let docs: Vec<String> = ds.corpus.iter().map(|d| d.full_text()).collect();
    let report = drift_report(new, old, &queries, &ds.corpus).unwrap();

    for (texts, got) in [(&queries, &report.query), (&docs, &report.corpus)] {
        let mut lengths: Vec<usize> = texts.iter().map(|t| t.split_whitespace().count()).collect();
        lengths.sort();
        let n = lengths.len();
        let (lo, hi) = (lengths[(n - 1) / 3], lengths[2 * (n - 1) / 3]);
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        for t in texts.iter() {
            let len = t.split_whitespace().count();
            let b = if len <= lo {
                0
            } else if len <= hi {
                1
            } else {
                2
            };
            let d = 1.0 - cosine_sim(&new.encode_text(t).unwrap(), &old.encode_text(t).unwrap()).unwrap();
            sums[b] += d;
            counts[b] += 1;
        }
        assert_eq!(got.counts, counts);
        for b in 0..3 {
            match got.mean_drift[b] {
                Some(m) => assert!((m - sums[b] / counts[b] as f64).abs() <= 1e-12),
                None => assert_eq!(counts[b], 0),
            }
        }
        assert!(got.mean_drift.iter().flatten().all(|&m| m > 0.0));
    }
}
