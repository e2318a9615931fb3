use std::collections::BTreeMap;

use super::*;
use crate::encoder::EncoderParams;
use crate::index::{DocRecord, RankedList, ScoredDoc};

fn ranked(ids: &[&str]) -> RankedList {
    RankedList {
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, id)| ScoredDoc {
                doc_id: id.to_string(),
                score: 1.0 - i as f64 * 0.01,
            })
            .collect(),
    }
}

fn judged(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
    pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
}

#[test]
fn perfect_first_hit() {
    let m = query_metrics(&ranked(&["a", "b", "c"]), &judged(&[("a", 1)]), 10);
    assert_eq!(m, QueryMetrics { ndcg: 1.0, recall: 1.0, map: 1.0 });
}

#[test]
fn single_relevant_at_rank_two() {
    let m = query_metrics(&ranked(&["x", "a", "c"]), &judged(&[("a", 1)]), 10);
    assert!((m.ndcg - 0.63093).abs() < 1e-5);
    assert!((m.ndcg - 1.0 / 3f64.log2()).abs() < 1e-15);
    assert_eq!(m.map, 0.5);
    assert_eq!(m.recall, 1.0);
}

#[test]
fn no_relevant_retrieved() {
    let m = query_metrics(&ranked(&["x", "y"]), &judged(&[("a", 2), ("b", 1)]), 10);
    assert_eq!(m, QueryMetrics::default());
}

#[test]
fn missing_qrels_and_means() {
    let mut run = BTreeMap::new();
    run.insert("q1".to_string(), ranked(&["a", "b"]));
    run.insert("q2".to_string(), ranked(&["b", "a"]));
    let mut qrels = Qrels::new();
    qrels.insert("q1".into(), judged(&[("a", 1)]));
    assert!(matches!(compute_metrics(&run, &qrels, 10), Err(Error::MissingQrels(q)) if q == "q2"));
    qrels.insert("q2".into(), judged(&[("a", 1)]));
    let report = compute_metrics(&run, &qrels, 10).unwrap();
    let expected = (1.0 + 1.0 / 3f64.log2()) / 2.0;
    assert!((report.mean.ndcg - expected).abs() < 1e-12);
    assert!((report.mean.map - 0.75).abs() < 1e-12);
    assert_eq!(report.mean.recall, 1.0);
}

/// Straight transcription of the metric definitions, used as an oracle.
fn oracle(order: &[usize], grades: &[u32], k: usize) -> (f64, f64, f64) {
    let mut dcg = 0.0;
    for pos in 0..order.len().min(k) {
        let g = grades[order[pos]] as f64;
        dcg += (2f64.powf(g) - 1.0) / ((pos + 2) as f64).ln() * std::f64::consts::LN_2;
    }
    let mut best = grades.to_vec();
    best.sort();
    best.reverse();
    let mut idcg = 0.0;
    for pos in 0..best.len().min(k) {
        idcg += (2f64.powf(best[pos] as f64) - 1.0) / ((pos + 2) as f64).ln() * std::f64::consts::LN_2;
    }
    let rel_total = grades.iter().filter(|g| **g > 0).count();
    let mut found = 0;
    let mut ap = 0.0;
    for pos in 0..order.len().min(k) {
        if grades[order[pos]] > 0 {
            found += 1;
            ap += found as f64 / (pos + 1) as f64;
        }
    }
    if rel_total == 0 {
        return (0.0, 0.0, 0.0);
    }
    (
        dcg / idcg,
        found as f64 / rel_total as f64,
        ap / rel_total.min(k) as f64,
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn is_ideal(order: &[usize], grades: &[u32], k: usize) -> bool {
    let mut best = grades.to_vec();
    best.sort_unstable_by(|a, b| b.cmp(a));
    let relevant = grades.iter().filter(|g| **g > 0).count();
    (0..k.min(relevant)).all(|i| grades[order[i]] == best[i])
}

#[test]
fn exhaustive_small_instances() {
    let names = ["d0", "d1", "d2", "d3", "d4"];
    let mut checked = 0;
    for n in 1..=5 {
        let perms = permutations(n);
        for code in 0..3usize.pow(n as u32) {
            let grades: Vec<u32> = (0..n).map(|i| (code / 3usize.pow(i as u32) % 3) as u32).collect();
            if grades.iter().all(|&g| g == 0) {
                continue;
            }
            let j: BTreeMap<String, u32> = names[..n]
                .iter()
                .zip(&grades)
                .map(|(d, g)| (d.to_string(), *g))
                .collect();
            for k in [1, 2, 3, 5, 10] {
                for order in &perms {
                    let ids: Vec<&str> = order.iter().map(|&i| names[i]).collect();
                    let m = query_metrics(&ranked(&ids), &j, k);
                    let (nd, rc, ap) = oracle(order, &grades, k);
                    assert!((m.ndcg - nd).abs() < 1e-9);
                    assert!((m.recall - rc).abs() < 1e-9);
                    assert!((m.map - ap).abs() < 1e-9);
                    assert!([m.ndcg, m.recall, m.map].iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
                    assert_eq!((m.ndcg - 1.0).abs() < 1e-12, is_ideal(order, &grades, k));
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn ndcg_monotone_under_promotion() {
    let names = ["a", "b", "c", "d", "e", "f"];
    let j = judged(&[("b", 2), ("d", 1), ("f", 1)]);
    for order in permutations(6) {
        let ids: Vec<&str> = order.iter().map(|&i| names[i]).collect();
        let base = query_metrics(&ranked(&ids), &j, 4).ndcg;
        for pos in 1..ids.len() {
            if j.contains_key(ids[pos]) {
                let mut better = ids.clone();
                better.swap(pos, pos - 1);
                // swapping with a more relevant neighbour is not a promotion
                if j.get(ids[pos - 1]).copied().unwrap_or(0) <= j[ids[pos]] {
                    assert!(query_metrics(&ranked(&better), &j, 4).ndcg >= base - 1e-12);
                }
            }
        }
    }
}

#[test]
fn invariant_to_relabeling_and_recall_monotone_in_k() {
    let j = judged(&[("a", 1), ("c", 2), ("e", 1)]);
    let order = ["b", "c", "d", "a", "f", "e"];
    let relabel = |s: &str| format!("doc-{}", s.to_uppercase());
    let j2: BTreeMap<String, u32> = j.iter().map(|(d, g)| (relabel(d), *g)).collect();
    let order2: Vec<String> = order.iter().map(|s| relabel(s)).collect();
    let order2: Vec<&str> = order2.iter().map(String::as_str).collect();
    let mut prev = 0.0;
    for k in 1..=8 {
        let m1 = query_metrics(&ranked(&order), &j, k);
        let m2 = query_metrics(&ranked(&order2), &j2, k);
        assert_eq!(m1, m2);
        assert!(m1.recall >= prev);
        prev = m1.recall;
    }
}

#[test]
fn pd_examples() {
    let mut m = ScoreMatrix::new(5);
    for (c, s) in [40.2, 38.7, 38.2, 36.3, 34.8].iter().enumerate() {
        m.set(c as u32 + 1, 1, *s);
    }
    for (c, s) in [67.8, 58.0, 66.1, 72.8, 75.0].iter().enumerate() {
        m.set(c as u32 + 1, 4, *s);
    }
    for t in [2, 3, 5] {
        for c in 1..=5 {
            m.set(c, t, 50.0);
        }
    }
    let pd = performance_drop(&m).unwrap();
    assert_eq!(format!("{:.1}", pd.per_task[&1]), "5.4");
    assert!((pd.per_task[&1] - 5.4).abs() < 1e-9);
    assert_eq!(format!("{:.1}", pd.per_task[&4]), "-2.2");
    assert!((pd.per_task[&4] + 2.2).abs() < 1e-9);
    assert_eq!(pd.per_task[&2], 0.0);
    assert!(!pd.per_task.contains_key(&5));

    let mut incomplete = ScoreMatrix::new(2);
    incomplete.set(2, 1, 0.5);
    assert!(matches!(performance_drop(&incomplete), Err(Error::IncompleteMatrix(_))));
}

#[test]
fn matrix_averages_and_render() {
    let mut m = ScoreMatrix::new(3);
    for c in 1..=3 {
        for t in 1..=3 {
            m.set(c, t, 0.1 * (c + t) as f64);
        }
    }
    assert!((m.average(2).unwrap() - 0.1 * (3 + 4 + 5) as f64 / 3.0).abs() < 1e-12);
    assert!((m.old_task_average(3).unwrap() - 0.1 * (4 + 5) as f64 / 2.0).abs() < 1e-12);
    assert_eq!(m.old_task_average(1), None);
    let text = m.render("FT");
    assert!(text.contains("PD(TX-T3)"));
    assert!(text.lines().any(|l| l.starts_with("task 1") && l.contains("20.0") && l.ends_with("-20.0")));
}

#[test]
fn drift_report_identical_encoders() {
    let p = EncoderParams::random(512, 8, 0.05, 0).unwrap();
    let queries: Vec<String> = (0..9).map(|i| "w ".repeat(i + 1)).collect();
    let corpus: Vec<DocRecord> = (0..6)
        .map(|i| DocRecord::new(format!("d{i}"), "", "alpha beta ".repeat(i + 1)))
        .collect();
    let r = drift_report(&p, &p, &queries, &corpus).unwrap();
    for pop in [&r.query, &r.corpus] {
        for m in pop.mean_drift.iter().flatten() {
            assert!(m.abs() < 1e-12);
        }
    }
    assert_eq!(r.query.counts, [3, 3, 3]);
    assert!(matches!(
        drift_report(&p, &p, &[], &corpus),
        Err(Error::EmptyPopulation("queries"))
    ));
    assert!(matches!(
        drift_report(&p, &p, &queries, &[]),
        Err(Error::EmptyPopulation("corpus"))
    ));
}

#[test]
fn tercile_boundaries_inclusive_low() {
    let b = LengthBuckets::terciles(&[1, 2, 3, 4, 5, 6]).unwrap();
    assert_eq!((b.short_max, b.medium_max), (2, 4));
    assert_eq!([1, 2, 3, 4, 5, 6].map(|l| b.bucket(l)), [0, 0, 1, 1, 2, 2]);
    let flat = LengthBuckets::terciles(&[4, 4, 4]).unwrap();
    assert_eq!(flat.bucket(4), 0);
    assert_eq!(LengthBuckets::terciles(&[]), None);
}
