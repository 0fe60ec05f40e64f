//! Exact top-k search by inner product over unit-norm vectors.
//!
//! Inner products are accumulated in `f64`, one sequential sum over the
//! dimensions per (query, gallery) pair, so each similarity is bit-identical
//! to a naive double-precision scan. Candidates are ranked by similarity,
//! descending, with ties going to the lower gallery index. A query's result
//! depends only on that query, so any partition of the queries into blocks
//! (and any number of threads working on those blocks) yields the same list.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// Gallery rows per transposed tile.
const LANES: usize = 8;
/// Queries sharing one pass over a tile.
const QGROUP: usize = 4;

/// Default number of queries processed together per pass over the gallery.
pub const DEFAULT_QUERY_BLOCK: usize = 128;

/// Top-k gallery indices and similarities for each query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    query_count: usize,
    k: usize,
    gallery_size: usize,
    indices: Vec<u32>,
    similarities: Vec<f64>,
}

impl NeighborList {
    /// Assembles a list from raw parts, checking shape, index range and the
    /// per-row ordering invariant.
    pub fn from_parts(
        k: usize,
        gallery_size: usize,
        indices: Vec<u32>,
        similarities: Vec<f64>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::KOutOfRange {
                k,
                max: gallery_size,
            });
        }
        if !indices.len().is_multiple_of(k) || indices.len() != similarities.len() {
            return Err(Error::LengthMismatch {
                what: "neighbor indices vs similarities",
                left: indices.len(),
                right: similarities.len(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= gallery_size) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                len: gallery_size,
            });
        }
        let list = Self {
            query_count: indices.len() / k,
            k,
            gallery_size,
            indices,
            similarities,
        };
        for q in 0..list.query_count {
            let (idx, sim) = (list.row(q), list.similarities(q));
            for j in 1..k {
                if rank(sim[j - 1], idx[j - 1], sim[j], idx[j]) != Ordering::Less {
                    return Err(Error::InvalidParameter(alloc::format!(
                        "row {q} is not sorted by similarity and index"
                    )));
                }
            }
        }
        Ok(list)
    }

    /// A list carrying only indices; similarities are set so that the given
    /// order is the ranking. Used for neighbor assignments that do not come
    /// from a search.
    pub fn from_indices(k: usize, gallery_size: usize, indices: Vec<u32>) -> Result<Self> {
        let similarities = (0..indices.len())
            .map(|p| -((p % k.max(1)) as f64))
            .collect();
        if k == 0 {
            return Err(Error::KOutOfRange {
                k,
                max: gallery_size,
            });
        }
        let query_count = indices.len() / k;
        if !indices.len().is_multiple_of(k) {
            return Err(Error::LengthMismatch {
                what: "neighbor indices vs k",
                left: indices.len(),
                right: k,
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= gallery_size) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                len: gallery_size,
            });
        }
        Ok(Self {
            query_count,
            k,
            gallery_size,
            indices,
            similarities,
        })
    }

    pub fn query_count(&self) -> usize {
        self.query_count
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gallery_size(&self) -> usize {
        self.gallery_size
    }

    pub fn row(&self, q: usize) -> &[u32] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn similarities(&self, q: usize) -> &[f64] {
        &self.similarities[q * self.k..(q + 1) * self.k]
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn all_similarities(&self) -> &[f64] {
        &self.similarities
    }

    /// The top-`k` prefix of every row.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k {
            return Err(Error::KOutOfRange { k, max: self.k });
        }
        let mut indices = Vec::with_capacity(self.query_count * k);
        let mut similarities = Vec::with_capacity(self.query_count * k);
        for q in 0..self.query_count {
            indices.extend_from_slice(&self.row(q)[..k]);
            similarities.extend_from_slice(&self.similarities(q)[..k]);
        }
        Ok(Self {
            query_count: self.query_count,
            k,
            gallery_size: self.gallery_size,
            indices,
            similarities,
        })
    }
}

/// `Less` when `(sa, ia)` ranks ahead of `(sb, ib)`.
#[inline]
fn rank(sa: f64, ia: u32, sb: f64, ib: u32) -> Ordering {
    sb.total_cmp(&sa).then(ia.cmp(&ib))
}

/// Which gallery row, if any, each query must skip.
#[derive(Debug, Clone, Copy)]
pub enum Exclude<'a> {
    Nothing,
    /// Query `i` skips gallery row `i` (queries and gallery share storage).
    Identity,
    PerQuery(&'a [Option<u32>]),
}

impl Exclude<'_> {
    #[inline]
    fn for_query(&self, q: usize) -> Option<u32> {
        match self {
            Exclude::Nothing => None,
            Exclude::Identity => Some(q as u32),
            Exclude::PerQuery(map) => map[q],
        }
    }

    fn excludes(&self) -> bool {
        !matches!(self, Exclude::Nothing)
    }
}

/// Checks the preconditions shared by every search backend.
pub fn validate(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    k: usize,
    exclude: Exclude<'_>,
) -> Result<()> {
    if !queries.is_normalized() || !gallery.is_normalized() {
        return Err(Error::Unnormalized);
    }
    if queries.dim() != gallery.dim() {
        return Err(Error::DimensionMismatch(queries.dim(), gallery.dim()));
    }
    if gallery.count() > u32::MAX as usize {
        return Err(Error::InvalidParameter(
            "gallery exceeds u32 indexing".into(),
        ));
    }
    let max = gallery.count() - usize::from(exclude.excludes());
    if k == 0 || k > max {
        return Err(Error::KOutOfRange { k, max });
    }
    match exclude {
        Exclude::Nothing => {}
        Exclude::Identity => {
            if queries.count() > gallery.count() {
                return Err(Error::CountMismatch(queries.count(), gallery.count()));
            }
        }
        Exclude::PerQuery(map) => {
            if map.len() != queries.count() {
                return Err(Error::LengthMismatch {
                    what: "self map vs queries",
                    left: map.len(),
                    right: queries.count(),
                });
            }
            if let Some(bad) = map
                .iter()
                .flatten()
                .find(|&&g| g as usize >= gallery.count())
            {
                return Err(Error::IndexOutOfRange {
                    index: *bad as usize,
                    len: gallery.count(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Cand {
    sim: f64,
    idx: u32,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cand {
    // Greater means worse, so the max-heap keeps the worst kept candidate on top.
    fn cmp(&self, other: &Self) -> Ordering {
        rank(self.sim, self.idx, other.sim, other.idx)
    }
}

struct Selector {
    k: usize,
    heap: BinaryHeap<Cand>,
    exclude: Option<u32>,
}

impl Selector {
    fn new(k: usize, exclude: Option<u32>) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
            exclude,
        }
    }

    #[inline]
    fn offer(&mut self, sim: f64, idx: u32) {
        if self.exclude == Some(idx) {
            return;
        }
        let cand = Cand { sim, idx };
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if cand < *worst {
                *worst = cand;
            }
        }
    }

    fn finish(self, idx_out: &mut [u32], sim_out: &mut [f64]) {
        for (j, c) in self.heap.into_sorted_vec().into_iter().enumerate() {
            idx_out[j] = c.idx;
            sim_out[j] = c.sim;
        }
    }
}

/// Searches queries `start .. start + idx_out.len() / k` against the whole
/// gallery, writing their rows into the output slices. Preconditions are
/// those of [`validate`], which callers must have checked.
pub fn search_block(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    k: usize,
    exclude: Exclude<'_>,
    start: usize,
    idx_out: &mut [u32],
    sim_out: &mut [f64],
) {
    let d = queries.dim();
    let nq = idx_out.len() / k;
    let m = gallery.count();

    let mut qbuf = Vec::with_capacity(nq * d);
    for q in start..start + nq {
        qbuf.extend(queries.row(q).iter().map(|&v| v as f64));
    }
    let mut selectors: Vec<Selector> = (start..start + nq)
        .map(|q| Selector::new(k, exclude.for_query(q)))
        .collect();

    let mut tile = vec![0.0f64; d * LANES];
    let mut g0 = 0;
    while g0 < m {
        let width = LANES.min(m - g0);
        transpose_tile(gallery, g0, width, &mut tile);
        let mut q = 0;
        while q + QGROUP <= nq {
            let acc = dot4(
                [
                    &qbuf[q * d..(q + 1) * d],
                    &qbuf[(q + 1) * d..(q + 2) * d],
                    &qbuf[(q + 2) * d..(q + 3) * d],
                    &qbuf[(q + 3) * d..(q + 4) * d],
                ],
                &tile,
            );
            for (qi, row) in acc.iter().enumerate() {
                let sel = &mut selectors[q + qi];
                for (lane, &s) in row.iter().enumerate().take(width) {
                    sel.offer(s, (g0 + lane) as u32);
                }
            }
            q += QGROUP;
        }
        while q < nq {
            let acc = dot1(&qbuf[q * d..(q + 1) * d], &tile);
            let sel = &mut selectors[q];
            for (lane, &s) in acc.iter().enumerate().take(width) {
                sel.offer(s, (g0 + lane) as u32);
            }
            q += 1;
        }
        g0 += width;
    }

    for (i, sel) in selectors.into_iter().enumerate() {
        sel.finish(
            &mut idx_out[i * k..(i + 1) * k],
            &mut sim_out[i * k..(i + 1) * k],
        );
    }
}

/// Lays out gallery rows `g0 .. g0 + width` as `tile[t * LANES + lane]`,
/// zero-padding unused lanes.
fn transpose_tile(gallery: &EmbeddingSet, g0: usize, width: usize, tile: &mut [f64]) {
    if width < LANES {
        tile.iter_mut().for_each(|v| *v = 0.0);
    }
    for lane in 0..width {
        for (t, &v) in gallery.row(g0 + lane).iter().enumerate() {
            tile[t * LANES + lane] = v as f64;
        }
    }
}

#[inline]
fn dot4(q: [&[f64]; QGROUP], tile: &[f64]) -> [[f64; LANES]; QGROUP] {
    let mut acc = [[0.0f64; LANES]; QGROUP];
    let cols = tile.chunks_exact(LANES);
    for ((((g, &a), &b), &c), &e) in cols.zip(q[0]).zip(q[1]).zip(q[2]).zip(q[3]) {
        let g: &[f64; LANES] = g.try_into().unwrap();
        for l in 0..LANES {
            acc[0][l] += a * g[l];
            acc[1][l] += b * g[l];
            acc[2][l] += c * g[l];
            acc[3][l] += e * g[l];
        }
    }
    acc
}

#[inline]
fn dot1(q: &[f64], tile: &[f64]) -> [f64; LANES] {
    let mut acc = [0.0f64; LANES];
    for (g, &a) in tile.chunks_exact(LANES).zip(q) {
        let g: &[f64; LANES] = g.try_into().unwrap();
        for l in 0..LANES {
            acc[l] += a * g[l];
        }
    }
    acc
}

/// A strategy for running exact top-k search. Every implementation must
/// return exactly what [`SerialSearch`] returns.
pub trait NeighborSearch {
    fn topk(
        &self,
        queries: &EmbeddingSet,
        gallery: &EmbeddingSet,
        k: usize,
        exclude: Exclude<'_>,
    ) -> Result<NeighborList>;
}

impl<S: NeighborSearch + ?Sized> NeighborSearch for &S {
    fn topk(
        &self,
        queries: &EmbeddingSet,
        gallery: &EmbeddingSet,
        k: usize,
        exclude: Exclude<'_>,
    ) -> Result<NeighborList> {
        (**self).topk(queries, gallery, k, exclude)
    }
}

/// Single-threaded search over blocks of `query_block` queries.
#[derive(Debug, Clone, Copy)]
pub struct SerialSearch {
    pub query_block: usize,
}

impl Default for SerialSearch {
    fn default() -> Self {
        Self {
            query_block: DEFAULT_QUERY_BLOCK,
        }
    }
}

impl NeighborSearch for SerialSearch {
    fn topk(
        &self,
        queries: &EmbeddingSet,
        gallery: &EmbeddingSet,
        k: usize,
        exclude: Exclude<'_>,
    ) -> Result<NeighborList> {
        validate(queries, gallery, k, exclude)?;
        let n = queries.count();
        let mut indices = vec![0u32; n * k];
        let mut similarities = vec![0.0f64; n * k];
        let step = self.query_block.max(1) * k;
        for (b, (ib, sb)) in indices
            .chunks_mut(step)
            .zip(similarities.chunks_mut(step))
            .enumerate()
        {
            search_block(
                queries,
                gallery,
                k,
                exclude,
                b * self.query_block.max(1),
                ib,
                sb,
            );
        }
        Ok(NeighborList {
            query_count: n,
            k,
            gallery_size: gallery.count(),
            indices,
            similarities,
        })
    }
}

/// [`SerialSearch`] with default blocking.
pub fn topk(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    k: usize,
    exclude: Exclude<'_>,
) -> Result<NeighborList> {
    SerialSearch::default().topk(queries, gallery, k, exclude)
}

/// Assembles a list from rows written by [`search_block`] calls.
pub fn assemble(
    query_count: usize,
    k: usize,
    gallery_size: usize,
    indices: Vec<u32>,
    similarities: Vec<f64>,
) -> NeighborList {
    debug_assert_eq!(indices.len(), query_count * k);
    NeighborList {
        query_count,
        k,
        gallery_size,
        indices,
        similarities,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> EmbeddingSet {
        EmbeddingSet::new(3, 3, 0, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap()
            .normalize()
            .unwrap()
    }

    #[test]
    fn basis_vector_finds_itself() {
        let g = basis();
        let q = g.select(&[0]).unwrap();
        let n = topk(&q, &g, 1, Exclude::Nothing).unwrap();
        assert_eq!(n.row(0), &[0]);
        assert_eq!(n.similarities(0), &[1.0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let g = basis();
        let q = g.select(&[0]).unwrap();
        let n = topk(&q, &g, 1, Exclude::PerQuery(&[Some(0)])).unwrap();
        assert_eq!(n.row(0), &[1]);
        let n = topk(&q, &g, 2, Exclude::PerQuery(&[Some(0)])).unwrap();
        assert_eq!(n.row(0), &[1, 2]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = basis();
        let raw = EmbeddingSet::new(1, 3, 0, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            topk(&raw, &g, 1, Exclude::Nothing),
            Err(Error::Unnormalized)
        );
        assert_eq!(
            topk(&g, &g, 3, Exclude::Identity),
            Err(Error::KOutOfRange { k: 3, max: 2 })
        );
        assert_eq!(
            topk(&g, &g, 0, Exclude::Nothing),
            Err(Error::KOutOfRange { k: 0, max: 3 })
        );
        let other = EmbeddingSet::new(1, 2, 0, vec![1.0, 0.0])
            .unwrap()
            .normalize()
            .unwrap();
        assert_eq!(
            topk(&other, &g, 1, Exclude::Nothing),
            Err(Error::DimensionMismatch(2, 3))
        );
    }

    #[test]
    fn identity_exclusion_and_truncate() {
        let g = basis();
        let n = topk(&g, &g, 2, Exclude::Identity).unwrap();
        for q in 0..3 {
            assert!(!n.row(q).contains(&(q as u32)));
        }
        let t = n.truncate(1).unwrap();
        assert_eq!(t.row(2), &n.row(2)[..1]);
        assert!(n.truncate(3).is_err());
    }

    #[test]
    fn from_parts_checks_order() {
        assert!(NeighborList::from_parts(2, 5, vec![1, 2], vec![0.5, 0.5]).is_ok());
        assert!(NeighborList::from_parts(2, 5, vec![2, 1], vec![0.5, 0.5]).is_err());
        assert!(NeighborList::from_parts(2, 5, vec![1, 9], vec![0.5, 0.4]).is_err());
    }
}
