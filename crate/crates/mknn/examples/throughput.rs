//! Exact top-k throughput over a synthetic gallery for several query-block
//! sizes.
//!
//! ```text
//! cargo run --release -p mknn --example throughput -- [rows] [dim] [queries] [k]
//! ```

use mknn::core::knn::Exclude;
use mknn::core::{rng, EmbeddingSet};
use mknn::search;
use rand::Rng;

fn uniform_set(n: usize, d: usize, seed: u64, name: &str) -> EmbeddingSet {
    let mut r = rng::stream(seed, name);
    let values = (0..n * d).map(|_| r.random::<f32>() - 0.5).collect();
    EmbeddingSet::new(n, d, 0, values)
        .unwrap()
        .normalize()
        .unwrap()
}

fn main() {
    let arg = |i: usize, default: usize| {
        std::env::args()
            .nth(i)
            .map(|s| s.parse().expect("numeric argument"))
            .unwrap_or(default)
    };
    let (rows, dim, queries, k) = (arg(1, 1_000_000), arg(2, 256), arg(3, 1024), arg(4, 10));
    let gallery = uniform_set(rows, dim, 1, "gallery");
    let q = uniform_set(queries, dim, 2, "queries");
    println!(
        "gallery {rows} x {dim}, {queries} queries, k = {k}, {} threads",
        rayon::current_num_threads()
    );
    let run =
        search::topk_blocked_scaling(&q, &gallery, k, Exclude::Nothing, &[64, 1024, 8192]).unwrap();
    for t in &run.throughput {
        println!(
            "block {:>5}: {:8.2} s  {:12.0} pairs/s",
            t.block_size, t.seconds, t.vectors_per_second
        );
    }
}
