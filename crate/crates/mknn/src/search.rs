//! Multi-threaded exact search and its block-size harness.

use std::time::Instant;

use mknn_core::knn::{self, Exclude, NeighborList, NeighborSearch, DEFAULT_QUERY_BLOCK};
use mknn_core::EmbeddingSet;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Query blocks are searched in parallel on the current rayon pool. Each
/// block writes a disjoint slice of the output, so the result equals
/// [`knn::SerialSearch`] for any block size or thread count.
#[derive(Debug, Clone, Copy)]
pub struct ParallelSearch {
    pub query_block: usize,
}

impl Default for ParallelSearch {
    fn default() -> Self {
        Self {
            query_block: DEFAULT_QUERY_BLOCK,
        }
    }
}

impl NeighborSearch for ParallelSearch {
    fn topk(
        &self,
        queries: &EmbeddingSet,
        gallery: &EmbeddingSet,
        k: usize,
        exclude: Exclude<'_>,
    ) -> mknn_core::Result<NeighborList> {
        knn::validate(queries, gallery, k, exclude)?;
        let n = queries.count();
        let block = self.query_block.max(1);
        let mut indices = vec![0u32; n * k];
        let mut similarities = vec![0.0f64; n * k];
        indices
            .par_chunks_mut(block * k)
            .zip(similarities.par_chunks_mut(block * k))
            .enumerate()
            .for_each(|(b, (ib, sb))| {
                knn::search_block(queries, gallery, k, exclude, b * block, ib, sb)
            });
        Ok(knn::assemble(n, k, gallery.count(), indices, similarities))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Throughput {
    pub block_size: usize,
    pub seconds: f64,
    /// Query-gallery vector pairs scored per second.
    pub vectors_per_second: f64,
}

#[derive(Debug, Clone)]
pub struct ScalingRun {
    pub neighbors: NeighborList,
    pub throughput: Vec<Throughput>,
}

/// Runs the search once per query block size, checks that every run returns
/// the same list, and reports the timings.
pub fn topk_blocked_scaling(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    k: usize,
    exclude: Exclude<'_>,
    block_sizes: &[usize],
) -> Result<ScalingRun> {
    let mut first: Option<NeighborList> = None;
    let mut throughput = Vec::with_capacity(block_sizes.len());
    for &block_size in block_sizes {
        let t = Instant::now();
        let list = ParallelSearch {
            query_block: block_size,
        }
        .topk(queries, gallery, k, exclude)?;
        let seconds = t.elapsed().as_secs_f64();
        throughput.push(Throughput {
            block_size,
            seconds,
            vectors_per_second: (queries.count() * gallery.count()) as f64 / seconds,
        });
        match &first {
            None => first = Some(list),
            Some(f) if *f != list => {
                return Err(Error::Invalid(format!(
                    "block size {block_size} changed the neighbor list"
                )))
            }
            Some(_) => {}
        }
    }
    let neighbors = first.ok_or_else(|| Error::Invalid("no block sizes given".into()))?;
    Ok(ScalingRun {
        neighbors,
        throughput,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
