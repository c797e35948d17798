mod common;

use common::*;
use rand::Rng;
use rerank_core::metrics::{
    aggregate, list_auc, list_map_at_k, list_ndcg, list_precision_at_k, pooled_auc, AucMode, ScoredList, CUTOFFS,
};
use rerank_core::PositionVector;

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    }
}

fn random_list(r: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
    let n = r.random_range(1..=8);
    // coarse scores so ties happen
    let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64 / 4.0).collect();
    let mut pos: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        pos.swap(i, r.random_range(0..=i));
    }
    let labels: Vec<f64> = (0..n).map(|_| r.random_range(0..2) as f64).collect();
    (scores, pos, labels)
}

#[test]
fn per_list_metrics_match_enumeration() {
    let mut r = rng(2024);
    for _ in 0..100 {
        let (s, pos, y) = random_list(&mut r);
        let pv = PositionVector::new(pos.clone()).unwrap();
        assert!(close(list_auc(&s, &y).unwrap(), auc(&s, &y)));
        assert!(close(list_ndcg(&pv, &y).unwrap(), ndcg(&pos, &y)));
        for k in CUTOFFS.iter().copied().chain([1, 2, 3]) {
            assert!(close(list_map_at_k(&pv, &y, k).unwrap(), ap_at(&pos, &y, k)), "k {k}");
            assert!((list_precision_at_k(&pv, &y, k).unwrap() - precision_at(&pos, &y, k)).abs() <= 1e-12);
        }
    }
}

#[test]
fn hand_cases() {
    assert_eq!(list_auc(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), Some(0.5));
    let ndcg = list_ndcg(&PositionVector::new(vec![1, 0]).unwrap(), &[1.0, 0.0])
        .unwrap()
        .unwrap();
    assert!((ndcg - 0.630929753571457).abs() < 1e-12);
    // relevant at display ranks 1 and 3
    let ap = list_map_at_k(
        &PositionVector::new(vec![0, 1, 2, 3, 4]).unwrap(),
        &[1.0, 0.0, 1.0, 0.0, 0.0],
        5,
    )
    .unwrap()
    .unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn pooled_auc_matches_pair_count() {
    let mut r = rng(7);
    let lists: Vec<_> = (0..30).map(|_| random_list(&mut r)).collect();
    let s: Vec<f64> = lists.iter().flat_map(|l| l.0.clone()).collect();
    let y: Vec<f64> = lists.iter().flat_map(|l| l.2.clone()).collect();
    let got = pooled_auc(lists.iter().map(|l| (l.0.as_slice(), l.2.as_slice()))).unwrap();
    assert!(close(got, auc(&s, &y)));
}

#[test]
fn aggregate_skips_undefined_lists() {
    let mk = |s: Vec<f64>, p: Vec<usize>, y: Vec<f64>| ScoredList {
        scores: s,
        ranking: PositionVector::new(p).unwrap(),
        labels: y,
    };
    let lists = vec![
        mk(vec![0.9, 0.1], vec![0, 1], vec![1.0, 0.0]),
        mk(vec![0.9, 0.1], vec![0, 1], vec![0.0, 0.0]),
        mk(vec![0.1, 0.9], vec![1, 0], vec![1.0, 0.0]),
    ];
    let rep = aggregate(&lists, AucMode::PerList).unwrap();
    assert_eq!(rep.auc, Some(0.5));
    assert_eq!(rep.n_lists_evaluated.auc, 2);
    assert_eq!(rep.n_lists_evaluated.total, 3);
    let want = (1.0 + 1.0 / 3f64.log2()) / 2.0;
    assert!((rep.ndcg.unwrap() - want).abs() < 1e-12);
    // precision counts every list, including the click-free one
    assert!((rep.precision_at[&5].unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!(aggregate(&[], AucMode::PerList).is_err());
}
