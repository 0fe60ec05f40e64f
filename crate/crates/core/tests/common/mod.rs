//! Independent reference implementations for the integration tests.
#![allow(dead_code)]

use mknn_core::rng::{self, Gaussian};
use mknn_core::EmbeddingSet;

pub fn gaussian_values(n: usize, d: usize, seed: u64) -> Vec<f32> {
    let mut g = Gaussian::new(rng::stream(seed, "test-data"));
    (0..n * d).map(|_| g.sample() as f32).collect()
}

pub fn random_set(n: usize, d: usize, seed: u64) -> EmbeddingSet {
    EmbeddingSet::new(n, d, 0, gaussian_values(n, d, seed))
        .unwrap()
        .normalize()
        .unwrap()
}

/// Full double-precision scan followed by a full sort on
/// (similarity descending, index ascending).
pub fn naive_topk(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    k: usize,
    exclude: &[Option<usize>],
) -> (Vec<Vec<u32>>, Vec<Vec<f64>>) {
    let mut idx = Vec::new();
    let mut sims = Vec::new();
    for q in 0..queries.count() {
        let qr = queries.row(q);
        let mut all: Vec<(f64, usize)> = (0..gallery.count())
            .filter(|&g| exclude.get(q).copied().flatten() != Some(g))
            .map(|g| {
                let mut s = 0.0f64;
                for (a, b) in qr.iter().zip(gallery.row(g)) {
                    s += *a as f64 * *b as f64;
                }
                (s, g)
            })
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        idx.push(all[..k].iter().map(|x| x.1 as u32).collect());
        sims.push(all[..k].iter().map(|x| x.0).collect());
    }
    (idx, sims)
}

/// Direct O(N^4) orthonormal 2-D DCT-II.
pub fn naive_dct(plane: &[f64], n: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let c = |u: usize| {
        if u == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        }
    };
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let mut s = 0.0;
            for y in 0..n {
                for x in 0..n {
                    s += plane[y * n + x]
                        * ((2 * y + 1) as f64 * u as f64 * pi / (2 * n) as f64).cos()
                        * ((2 * x + 1) as f64 * v as f64 * pi / (2 * n) as f64).cos();
                }
            }
            out[u * n + v] = c(u) * c(v) * s;
        }
    }
    out
}

/// Connected components of the all-pairs `hamming <= t` graph by BFS.
pub fn brute_clusters(hashes: &[u64], t: u32) -> Vec<Vec<usize>> {
    let n = hashes.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if (hashes[i] ^ hashes[j]).count_ones() <= t {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut head = 0;
        while head < comp.len() {
            let x = comp[head];
            head += 1;
            for &y in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    comp.push(y);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Applies a row-major `d x d` matrix to every row in f64, returning the
/// transformed rows before any cast.
pub fn transform_f64(e: &EmbeddingSet, m: &[f64]) -> Vec<Vec<f64>> {
    let d = e.dim();
    e.rows()
        .map(|r| {
            (0..d)
                .map(|i| (0..d).map(|t| m[i * d + t] * r[t] as f64).sum())
                .collect()
        })
        .collect()
}

pub fn to_set(rows: &[Vec<f64>]) -> EmbeddingSet {
    let d = rows[0].len();
    let values = rows.iter().flatten().map(|&v| v as f32).collect();
    EmbeddingSet::new(rows.len(), d, 0, values)
        .unwrap()
        .normalize()
        .unwrap()
}

/// Unit vectors on the circle at the given angles in degrees.
pub fn circle(degrees: &[f64]) -> EmbeddingSet {
    let values = degrees
        .iter()
        .flat_map(|a| {
            let r = a.to_radians();
            [r.cos() as f32, r.sin() as f32]
        })
        .collect();
    EmbeddingSet::new(degrees.len(), 2, 0, values)
        .unwrap()
        .normalize()
        .unwrap()
}
