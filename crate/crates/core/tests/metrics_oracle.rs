mod support;

use std::collections::BTreeMap;
use std::fs::File;

use bmq_core::corpus::load_qrels;
use bmq_core::evalkit::{evaluate, map_at_k, ndcg_at_k, recall_at_k, Gain};
use bmq_core::runfile::RunResult;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{brute_ap, brute_ndcg, brute_recall, fixture, qrels_from, random_judgments};

const ORACLE_TOL: f64 = 1e-9;
const TREC_EVAL_TOL: f64 = 1e-4;

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn thousand_random_rankings_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3E7);
    for case in 0..1000 {
        let (ranking, judged) = random_judgments(&mut rng);
        for k in [1, 5, 10, 100] {
            let r = refs(&ranking);
            let got = [
                ndcg_at_k(&r, &judged, k, Gain::Linear),
                map_at_k(&r, &judged, k),
                recall_at_k(&r, &judged, k),
            ];
            let want = [
                brute_ndcg(&ranking, &judged, k),
                brute_ap(&ranking, &judged, k),
                brute_recall(&ranking, &judged, k),
            ];
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= ORACLE_TOL, "case {case} k={k}: {got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn matches_trec_eval_reference() {
    let qrels = load_qrels(fixture("trec_eval/qrels.tsv")).unwrap();
    let run = RunResult::read_trec(File::open(fixture("trec_eval/run.trec")).unwrap()).unwrap();
    let expected: serde_json::Value =
        serde_json::from_reader(File::open(fixture("trec_eval/expected.json")).unwrap()).unwrap();
    let report = evaluate(&run, &qrels, 10, Gain::Linear).unwrap();

    let per_query = expected["per_query"].as_object().unwrap();
    assert_eq!(per_query.len(), 50);
    for (qid, want) in per_query {
        let got = report.per_query.get(qid).unwrap_or_else(|| panic!("{qid} missing"));
        for (name, val) in [("ndcg_cut_10", got.ndcg), ("map_cut_10", got.map), ("recall_10", got.recall)] {
            let w = want[name].as_f64().unwrap();
            assert!((val - w).abs() <= TREC_EVAL_TOL, "{qid} {name}: {val} vs {w}");
        }
    }
    let mean = &expected["mean"];
    assert!((report.mean.ndcg - mean["ndcg_cut_10"].as_f64().unwrap()).abs() <= TREC_EVAL_TOL);
    assert!((report.mean.map - mean["map_cut_10"].as_f64().unwrap()).abs() <= TREC_EVAL_TOL);
    assert!((report.mean.recall - mean["recall_10"].as_f64().unwrap()).abs() <= TREC_EVAL_TOL);
}

#[test]
fn hand_computed_ndcg() {
    // grades 2 at rank 1, 1 at rank 3; ideal 2, 1
    let judged: BTreeMap<String, u32> = [("a", 2), ("c", 1)].iter().map(|(d, g)| (d.to_string(), *g)).collect();
    let dcg = 2.0 + 1.0 / 2.0;
    let idcg = 2.0 + 1.0 / 3f64.log2();
    let got = ndcg_at_k(&["a", "b", "c"], &judged, 10, Gain::Linear);
    assert!((got - dcg / idcg).abs() < 1e-12);
    // exponential: 2^g - 1
    let dcg = 3.0 + 1.0 / 2.0;
    let idcg = 3.0 + 1.0 / 3f64.log2();
    let got = ndcg_at_k(&["a", "b", "c"], &judged, 10, Gain::Exponential);
    assert!((got - dcg / idcg).abs() < 1e-12);
}

#[test]
fn mean_is_independent_of_query_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut judged = BTreeMap::new();
    let mut run = RunResult::new("a");
    let mut rankings = Vec::new();
    for q in 0..40 {
        let (ranking, j) = random_judgments(&mut rng);
        let qid = format!("q{q:02}");
        judged.insert(qid.clone(), j);
        rankings.push((qid, ranking));
    }
    for (qid, r) in &rankings {
        run.push(qid.clone(), r.iter().enumerate().map(|(i, d)| (d.clone(), 100.0 - i as f64)).collect());
    }
    let mut reversed = RunResult::new("b");
    for (qid, r) in rankings.iter().rev() {
        reversed.push(qid.clone(), r.iter().enumerate().map(|(i, d)| (d.clone(), 100.0 - i as f64)).collect());
    }
    let qrels = qrels_from(&judged);
    let a = evaluate(&run, &qrels, 10, Gain::Linear).unwrap();
    let b = evaluate(&reversed, &qrels, 10, Gain::Linear).unwrap();
    assert_eq!(a.mean, b.mean);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_are_bounded(seed in any::<u64>(), k in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ranking, judged) = random_judgments(&mut rng);
        let r = refs(&ranking);
        for v in [
            ndcg_at_k(&r, &judged, k, Gain::Linear),
            ndcg_at_k(&r, &judged, k, Gain::Exponential),
            map_at_k(&r, &judged, k),
            recall_at_k(&r, &judged, k),
        ] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
        }
    }

    #[test]
    fn ideal_ranking_scores_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, judged) = random_judgments(&mut rng);
        let mut ideal: Vec<String> = judged.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.clone()).collect();
        prop_assume!(!ideal.is_empty());
        ideal.sort_by_key(|d| std::cmp::Reverse(judged[d]));
        let r = refs(&ideal);
        let k = ideal.len();
        prop_assert!((ndcg_at_k(&r, &judged, k, Gain::Linear) - 1.0).abs() < 1e-12);
        prop_assert!((map_at_k(&r, &judged, k) - 1.0).abs() < 1e-12);
        prop_assert!((recall_at_k(&r, &judged, k) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recall_is_monotone_in_k(seed in any::<u64>(), k in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ranking, judged) = random_judgments(&mut rng);
        let r = refs(&ranking);
        prop_assert!(recall_at_k(&r, &judged, k) <= recall_at_k(&r, &judged, k + 1));
    }
}
