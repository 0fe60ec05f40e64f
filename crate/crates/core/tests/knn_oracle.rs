mod common;

use common::{naive_topk, random_set};
use mknn_core::knn::{Exclude, NeighborSearch, SerialSearch};
use mknn_core::EmbeddingSet;
use proptest::prelude::*;

fn check_against_oracle(q: &EmbeddingSet, g: &EmbeddingSet, k: usize, exclude: Exclude<'_>) {
    let map: Vec<Option<usize>> = match exclude {
        Exclude::Nothing => vec![None; q.count()],
        Exclude::Identity => (0..q.count()).map(Some).collect(),
        Exclude::PerQuery(m) => m.iter().map(|x| x.map(|v| v as usize)).collect(),
    };
    let (idx, sims) = naive_topk(q, g, k, &map);
    let got = SerialSearch::default().topk(q, g, k, exclude).unwrap();
    for i in 0..q.count() {
        assert_eq!(got.row(i), idx[i].as_slice(), "query {i}");
        assert_eq!(got.similarities(i), sims[i].as_slice(), "query {i}");
    }
}

#[test]
fn matches_naive_scan_on_random_instances() {
    for (seed, (n, m, d, k)) in [
        (37, 500, 17, 10),
        (64, 2000, 64, 32),
        (3, 7, 1, 7),
        (129, 301, 9, 1),
    ]
    .into_iter()
    .enumerate()
    {
        let q = random_set(n, d, seed as u64);
        let g = random_set(m, d, 1000 + seed as u64);
        check_against_oracle(&q, &g, k, Exclude::Nothing);
    }
}

#[test]
fn ties_from_duplicate_rows_follow_index_order() {
    // every gallery vector appears three times
    let base = random_set(40, 6, 5);
    let idx: Vec<usize> = (0..120).map(|i| i % 40).collect();
    let g = base.select(&idx).unwrap();
    let q = random_set(25, 6, 6);
    check_against_oracle(&q, &g, 9, Exclude::Nothing);
    let got = SerialSearch::default()
        .topk(&q, &g, 3, Exclude::Nothing)
        .unwrap();
    for i in 0..q.count() {
        let r = got.row(i);
        assert_eq!(got.similarities(i)[0], got.similarities(i)[2]);
        assert!(r[0] < r[1] && r[1] < r[2]);
    }
}

#[test]
fn shared_set_self_exclusion() {
    let s = random_set(300, 12, 8);
    check_against_oracle(&s, &s, 15, Exclude::Identity);
    let got = SerialSearch::default()
        .topk(&s, &s, 15, Exclude::Identity)
        .unwrap();
    for i in 0..s.count() {
        assert!(!got.row(i).contains(&(i as u32)));
    }
}

#[test]
fn per_query_exclusion() {
    let q = random_set(30, 4, 9);
    let g = random_set(50, 4, 10);
    let map: Vec<Option<u32>> = (0..30)
        .map(|i| if i % 2 == 0 { Some(i as u32) } else { None })
        .collect();
    check_against_oracle(&q, &g, 5, Exclude::PerQuery(&map));
}

#[test]
fn block_size_does_not_change_output() {
    let q = random_set(77, 16, 11);
    let g = random_set(513, 16, 12);
    let reference = SerialSearch { query_block: 1 }
        .topk(&q, &g, 7, Exclude::Nothing)
        .unwrap();
    for block in [2, 3, 4, 5, 64, 1024] {
        let got = SerialSearch { query_block: block }
            .topk(&q, &g, 7, Exclude::Nothing)
            .unwrap();
        assert_eq!(got, reference, "block {block}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_equivalence_small(n in 1usize..40, m in 2usize..80, d in 1usize..12, kf in 0.0f64..1.0, seed in any::<u64>()) {
        let q = random_set(n, d, seed);
        let g = random_set(m, d, seed.wrapping_add(1));
        let k = 1 + ((m - 1) as f64 * kf) as usize;
        check_against_oracle(&q, &g, k, Exclude::Nothing);
        let got = SerialSearch::default().topk(&q, &g, k, Exclude::Nothing).unwrap();
        for i in 0..n {
            let s = got.similarities(i);
            prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(got.row(i).iter().all(|&x| (x as usize) < m));
        }
    }
}
