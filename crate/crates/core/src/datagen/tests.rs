use std::collections::BTreeSet;
use std::fs;

use super::*;
use crate::encoder::words;

fn small() -> StreamSpec {
    StreamSpec {
        docs_per_task: 60,
        train_pairs_per_task: 20,
        test_queries_per_task: 10,
        vocab_size: 120,
        ..StreamSpec::default()
    }
}

#[test]
fn deterministic() {
    let a = generate_task_stream(&small()).unwrap();
    let b = generate_task_stream(&small()).unwrap();
    assert_eq!(a, b);
    let c = generate_task_stream(&StreamSpec { seed: 7, ..small() }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn default_counts() {
    let spec = StreamSpec::default();
    let stream = generate_task_stream(&spec).unwrap();
    assert_eq!(stream.len(), 3);
    for (t, ds) in stream.iter().enumerate() {
        assert_eq!(ds.task_id, t as u32 + 1);
        assert_eq!(ds.corpus.len(), 2000);
        assert_eq!(ds.train_pairs.len(), 500);
        assert_eq!(ds.queries_test.len(), 200);
        assert_eq!(ds.qrels.len(), 200);
        ds.validate().unwrap();
        for q in &ds.queries_test {
            let judged = &ds.qrels[&q.query_id];
            assert_eq!(judged.len(), 1);
            assert_eq!(judged.values().copied().collect::<Vec<_>>(), [1]);
        }
        // lengths count body words; the prefix is one extra word
        for d in &ds.corpus {
            let n = d.text.split_whitespace().count() - 1;
            assert!((30..=80).contains(&n));
        }
        for q in &ds.queries_test {
            let n = q.text.split_whitespace().count() - 1;
            assert!((3..=6).contains(&n));
        }
    }
}

#[test]
fn query_words_come_from_their_document() {
    let stream = generate_task_stream(&small()).unwrap();
    for ds in &stream {
        for p in &ds.train_pairs {
            let doc = ds.corpus.iter().find(|d| d.doc_id == p.doc_id).unwrap();
            let doc_words: BTreeSet<String> = words(&doc.text).collect();
            let body = p.query.strip_prefix("search_query: ").unwrap();
            assert!(words(body).all(|w| doc_words.contains(&w)));
            assert!(doc.text.starts_with("search_document: "));
        }
        let train_docs: BTreeSet<&str> = ds.train_pairs.iter().map(|p| p.doc_id.as_str()).collect();
        for j in ds.qrels.values() {
            assert!(j.keys().all(|d| !train_docs.contains(d.as_str())));
        }
    }
}

#[test]
fn overlap_controls_shared_topic_words() {
    let disjoint = topic_words(&StreamSpec { vocab_overlap: 0.0, ..small() }).unwrap();
    for pair in disjoint.windows(2) {
        assert!(pair[0].is_disjoint(&pair[1]));
    }
    let partial = topic_words(&small()).unwrap();
    for pair in partial.windows(2) {
        assert_eq!(pair[0].intersection(&pair[1]).count(), 24);
    }
    let full = topic_words(&StreamSpec { vocab_overlap: 1.0, ..small() }).unwrap();
    assert!(full.windows(2).all(|p| p[0] == p[1]));

    // with no background or prefixes the corpora follow their topic vocabularies
    let spec = StreamSpec {
        vocab_overlap: 0.0,
        background_rate: 0.0,
        query_prefix: String::new(),
        doc_prefix: String::new(),
        ..small()
    };
    let stream = generate_task_stream(&spec).unwrap();
    let used: Vec<BTreeSet<String>> = stream
        .iter()
        .map(|ds| ds.corpus.iter().flat_map(|d| words(&d.text).collect::<Vec<_>>()).collect())
        .collect();
    assert!(used[0].is_disjoint(&used[1]));
}

#[test]
fn word_spelling_is_injective() {
    let spelled: BTreeSet<String> = (0..20_000).map(word).collect();
    assert_eq!(spelled.len(), 20_000);
    assert!(spelled.iter().all(|w| words(w).count() == 1));
}

#[test]
fn invalid_specs() {
    for bad in [
        StreamSpec { num_tasks: 0, ..small() },
        StreamSpec { vocab_overlap: 1.5, ..small() },
        StreamSpec { doc_length: (9, 3), ..small() },
        StreamSpec { train_pairs_per_task: 100, ..small() },
        StreamSpec { query_length: (3, 9), ..small() },
    ] {
        assert!(matches!(generate_task_stream(&bad), Err(Error::InvalidSpec(_))));
    }
}

#[test]
fn beir_round_trip() {
    let ds = generate_task_stream(&small()).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    export_beir(&ds, dir.path()).unwrap();
    let back = load_beir_dir(dir.path(), 1).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn beir_fixture_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let corpus: String = (0..10)
        .map(|i| format!("{{\"_id\": \"d{i}\", \"title\": \"t{i}\", \"text\": \"body {i}\"}}\n"))
        .collect();
    let queries: String = (0..5)
        .map(|i| format!("{{\"_id\": \"q{i}\", \"text\": \"query {i}\"}}\n"))
        .collect();
    let qrels: String = std::iter::once("query-id\tcorpus-id\tscore\n".to_string())
        .chain((0..5).map(|i| format!("q{i}\td{}\t1\n", i + 2)))
        .collect();
    fs::write(p.join("corpus.jsonl"), &corpus).unwrap();
    fs::write(p.join("queries.jsonl"), &queries).unwrap();
    fs::write(p.join("qrels.tsv"), &qrels).unwrap();
    let ds = load_beir_dataset(
        1,
        &p.join("corpus.jsonl"),
        &p.join("queries.jsonl"),
        &p.join("qrels.tsv"),
        None,
    )
    .unwrap();
    assert_eq!(ds.corpus.len(), corpus.lines().count());
    assert_eq!(ds.queries_test.len(), queries.lines().count());
    assert_eq!(ds.qrels["q1"]["d3"], 1);
    assert_eq!(ds.train_pairs.len(), 5);
    assert_eq!(ds.corpus[4].title, "t4");

    fs::write(p.join("bad.tsv"), "q1\td99\t1\n").unwrap();
    let err = load_beir_dataset(1, &p.join("corpus.jsonl"), &p.join("queries.jsonl"), &p.join("bad.tsv"), None);
    assert!(matches!(err, Err(Error::DanglingReference { doc_id, .. }) if doc_id == "d99"));

    fs::write(p.join("short.tsv"), "q1\td1\n").unwrap();
    let err = load_beir_dataset(1, &p.join("corpus.jsonl"), &p.join("queries.jsonl"), &p.join("short.tsv"), None);
    assert!(matches!(err, Err(Error::Parse { line: 1, .. })));

    fs::write(p.join("broken.jsonl"), "{\"_id\": \"d0\", \"text\": \"x\"}\nnot json\n").unwrap();
    let err = load_beir_dataset(1, &p.join("broken.jsonl"), &p.join("queries.jsonl"), &p.join("qrels.tsv"), None);
    assert!(matches!(err, Err(Error::Parse { line: 2, .. })));

    let err = load_beir_dataset(1, &p.join("missing.jsonl"), &p.join("queries.jsonl"), &p.join("qrels.tsv"), None);
    assert!(matches!(err, Err(Error::Io { .. })));
}
