use mknn::core::knn::{self, Exclude, NeighborSearch, SerialSearch};
use mknn::core::EmbeddingSet;
use mknn::search::{self, ParallelSearch};
use rand::{Rng, SeedableRng};

fn random_set(n: usize, d: usize, seed: u64) -> EmbeddingSet {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f32> = (0..n * d).map(|_| r.random::<f32>() - 0.5).collect();
    EmbeddingSet::new(n, d, 0, v).unwrap().normalize().unwrap()
}

#[test]
fn parallel_equals_serial_for_any_blocking_and_threads() {
    let g = random_set(1500, 24, 1);
    let q = random_set(301, 24, 2);
    let want = knn::topk(&q, &g, 12, Exclude::Nothing).unwrap();
    for threads in [1, 2, 4, 7] {
        for block in [1, 5, 64, 128, 1000] {
            let got = search::with_threads(Some(threads), || {
                ParallelSearch { query_block: block }.topk(&q, &g, 12, Exclude::Nothing)
            })
            .unwrap()
            .unwrap();
            assert_eq!(got, want, "threads {threads} block {block}");
        }
    }
    let shared = search::with_threads(Some(3), || {
        ParallelSearch::default().topk(&g, &g, 5, Exclude::Identity)
    })
    .unwrap()
    .unwrap();
    assert_eq!(
        shared,
        SerialSearch { query_block: 7 }
            .topk(&g, &g, 5, Exclude::Identity)
            .unwrap()
    );
}

#[test]
fn blocked_scaling_returns_one_list() {
    let g = random_set(3000, 16, 3);
    let q = random_set(200, 16, 4);
    let run =
        search::topk_blocked_scaling(&q, &g, 10, Exclude::Nothing, &[64, 1024, 8192]).unwrap();
    assert_eq!(
        run.neighbors,
        knn::topk(&q, &g, 10, Exclude::Nothing).unwrap()
    );
    assert_eq!(run.throughput.len(), 3);
    assert!(run.throughput.iter().all(|t| t.vectors_per_second > 0.0));
}

#[test]
fn parallel_validates_like_serial() {
    let g = random_set(10, 4, 5);
    let q = random_set(3, 5, 6);
    assert!(ParallelSearch::default()
        .topk(&q, &g, 1, Exclude::Nothing)
        .is_err());
    assert!(ParallelSearch::default()
        .topk(&g, &g, 10, Exclude::Identity)
        .is_err());
    let raw = EmbeddingSet::new(1, 4, 0, vec![1.0; 4]).unwrap();
    assert!(ParallelSearch::default()
        .topk(&raw, &g, 1, Exclude::Nothing)
        .is_err());
}
