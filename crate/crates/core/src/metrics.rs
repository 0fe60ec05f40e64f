//! Mutual-kNN alignment and the analyses built on it.
//!
//! Scores are raw overlaps. The chance level `k / gallery_size` is carried in
//! every report for context and is never subtracted.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::embedding::{EmbeddingSet, GallerySelection};
use crate::error::{Error, Result};
use crate::knn::{Exclude, NeighborList, NeighborSearch};
use crate::rng;

/// Where a report came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportConfig {
    pub query_set: Option<String>,
    pub seed: Option<u64>,
    pub layer_pair: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlignmentReport {
    pub mean_score: f64,
    pub per_sample: Vec<f64>,
    pub k: usize,
    pub gallery_size: usize,
    pub chance_level: f64,
    pub config: ReportConfig,
}

impl AlignmentReport {
    fn from_counts(counts: &[usize], k: usize, gallery_size: usize) -> Self {
        let per_sample: Vec<f64> = counts.iter().map(|&c| c as f64 / k as f64).collect();
        // one rounding from the integer total, rather than one per query
        let total: usize = counts.iter().sum();
        let mean_score = total as f64 / (k * counts.len()) as f64;
        Self {
            mean_score,
            per_sample,
            k,
            gallery_size,
            chance_level: k as f64 / gallery_size as f64,
            config: ReportConfig::default(),
        }
    }
}

fn check_compatible(a: &NeighborList, b: &NeighborList) -> Result<()> {
    if a.k() != b.k() {
        return Err(Error::InvalidParameter(alloc::format!(
            "neighbor lists use different k ({} vs {})",
            a.k(),
            b.k()
        )));
    }
    if a.query_count() != b.query_count() {
        return Err(Error::CountMismatch(a.query_count(), b.query_count()));
    }
    if a.query_count() == 0 {
        return Err(Error::EmptyInput("neighbor lists"));
    }
    if a.gallery_size() != b.gallery_size() {
        return Err(Error::InvalidParameter(alloc::format!(
            "neighbor lists index different galleries ({} vs {} rows)",
            a.gallery_size(),
            b.gallery_size()
        )));
    }
    Ok(())
}

fn sorted_row(row: &[u32], buf: &mut Vec<u32>) {
    buf.clear();
    buf.extend_from_slice(row);
    buf.sort_unstable();
}

/// Size of the intersection of two ascending lists, counting an element
/// `min(multiplicity)` times.
fn merge_count(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Per-query overlap `|N_a(i) ∩ N_b(i)| / k`, averaged over queries.
pub fn mutual_knn(a: &NeighborList, b: &NeighborList) -> Result<AlignmentReport> {
    check_compatible(a, b)?;
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    let counts: Vec<usize> = (0..a.query_count())
        .map(|q| {
            sorted_row(a.row(q), &mut ra);
            sorted_row(b.row(q), &mut rb);
            ra.dedup();
            rb.dedup();
            merge_count(&ra, &rb)
        })
        .collect();
    Ok(AlignmentReport::from_counts(
        &counts,
        a.k(),
        a.gallery_size(),
    ))
}

/// Mutual kNN where an item retrieved in one space matches any item sharing
/// its group in the other. `groups[g]` is the group of gallery row `g`.
///
/// Matching is one-to-one between list entries: a group present `x` times in
/// one list and `y` times in the other contributes `min(x, y)` matches, so the
/// score stays in `[0, 1]` and singleton groups give the raw metric.
pub fn grouped_mutual_knn(
    a: &NeighborList,
    b: &NeighborList,
    groups: &[u32],
) -> Result<AlignmentReport> {
    check_compatible(a, b)?;
    if groups.len() != a.gallery_size() {
        return Err(Error::LengthMismatch {
            what: "group ids vs gallery",
            left: groups.len(),
            right: a.gallery_size(),
        });
    }
    let map = |row: &[u32], buf: &mut Vec<u32>| {
        buf.clear();
        buf.extend(row.iter().map(|&g| groups[g as usize]));
        buf.sort_unstable();
    };
    let (mut ga, mut gb) = (Vec::new(), Vec::new());
    let counts: Vec<usize> = (0..a.query_count())
        .map(|q| {
            map(a.row(q), &mut ga);
            map(b.row(q), &mut gb);
            merge_count(&ga, &gb)
        })
        .collect();
    Ok(AlignmentReport::from_counts(
        &counts,
        a.k(),
        a.gallery_size(),
    ))
}

fn check_pair(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<()> {
    if a.count() != b.count() {
        return Err(Error::CountMismatch(a.count(), b.count()));
    }
    Ok(())
}

fn check_ks(ks: &[usize], max: usize) -> Result<usize> {
    let Some(&largest) = ks.last() else {
        return Err(Error::EmptyInput("k list"));
    };
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::NotAscending);
    }
    if ks[0] == 0 || largest > max {
        return Err(Error::KOutOfRange {
            k: if ks[0] == 0 { 0 } else { largest },
            max,
        });
    }
    Ok(largest)
}

/// Mutual kNN on a gallery that doubles as the query set (each row skips
/// itself), for every `k` in `ks`.
///
/// One search at `max(ks)` serves all smaller `k`, since each top-k list is a
/// prefix of the next.
pub fn k_sweep<S: NeighborSearch>(
    feat_a: &EmbeddingSet,
    feat_b: &EmbeddingSet,
    gallery: &[usize],
    ks: &[usize],
    search: &S,
) -> Result<Vec<AlignmentReport>> {
    check_pair(feat_a, feat_b)?;
    let n = gallery.len();
    if n < 2 {
        return Err(Error::EmptyInput("gallery needs at least two rows"));
    }
    let largest = check_ks(ks, n - 1)?;
    let ga = feat_a.select(gallery)?;
    let gb = feat_b.select(gallery)?;
    let na = search.topk(&ga, &ga, largest, Exclude::Identity)?;
    let nb = search.topk(&gb, &gb, largest, Exclude::Identity)?;
    ks.iter()
        .map(|&k| mutual_knn(&na.truncate(k)?, &nb.truncate(k)?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvePoint {
    pub gallery_size: usize,
    pub k: usize,
    pub mean_score: f64,
    pub chance_level: f64,
}

/// Mutual kNN of a fixed query set against each nested gallery of
/// `selection`, for every `k` in `ks`. Values of `k` above a gallery size
/// are skipped for that size.
pub fn scale_curve<S: NeighborSearch>(
    feat_a: &EmbeddingSet,
    feat_b: &EmbeddingSet,
    queries: &[usize],
    selection: &GallerySelection,
    ks: &[usize],
    search: &S,
) -> Result<Vec<CurvePoint>> {
    scale_curve_by(feat_a, feat_b, queries, selection, |_| ks.to_vec(), search)
}

/// [`scale_curve`] with the values of `k` chosen per gallery size, e.g. in
/// proportion to it. `ks_for(size)` must be ascending.
pub fn scale_curve_by<S: NeighborSearch, F: Fn(usize) -> Vec<usize>>(
    feat_a: &EmbeddingSet,
    feat_b: &EmbeddingSet,
    queries: &[usize],
    selection: &GallerySelection,
    ks_for: F,
    search: &S,
) -> Result<Vec<CurvePoint>> {
    check_pair(feat_a, feat_b)?;
    if queries.is_empty() {
        return Err(Error::EmptyInput("query set"));
    }
    if let Some(&q) = selection.permutation().iter().find(|g| queries.contains(g)) {
        return Err(Error::QueryInGallery(q));
    }
    let qa = feat_a.select(queries)?;
    let qb = feat_b.select(queries)?;
    let mut curve = Vec::new();
    for (size, gallery) in selection.sizes.iter().zip(selection.indices_per_size()) {
        let usable: Vec<usize> = ks_for(*size).into_iter().filter(|&k| k <= *size).collect();
        if usable.is_empty() {
            continue;
        }
        let largest = check_ks(&usable, *size)?;
        let ga = feat_a.select(&gallery)?;
        let gb = feat_b.select(&gallery)?;
        let na = search.topk(&qa, &ga, largest, Exclude::Nothing)?;
        let nb = search.topk(&qb, &gb, largest, Exclude::Nothing)?;
        for &k in &usable {
            let r = mutual_knn(&na.truncate(k)?, &nb.truncate(k)?)?;
            curve.push(CurvePoint {
                gallery_size: *size,
                k,
                mean_score: r.mean_score,
                chance_level: r.chance_level,
            });
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerPair {
    /// Positions in the input lists.
    pub index_a: usize,
    pub index_b: usize,
    /// Layer ids recorded on the embedding sets.
    pub layer_a: u32,
    pub layer_b: u32,
    pub score: f64,
    /// `grid[i][j]` is the score of layer pair `(i, j)`.
    pub grid: Vec<Vec<f64>>,
}

/// Exhaustive sweep over layer pairs on a probe subset; ties go to the lower
/// `index_a`, then the lower `index_b`.
pub fn best_layer_pair<S: NeighborSearch>(
    layers_a: &[EmbeddingSet],
    layers_b: &[EmbeddingSet],
    probe: &[usize],
    k: usize,
    search: &S,
) -> Result<LayerPair> {
    if layers_a.is_empty() || layers_b.is_empty() {
        return Err(Error::EmptyInput("layer list"));
    }
    let lists = |layers: &[EmbeddingSet]| -> Result<Vec<NeighborList>> {
        layers
            .iter()
            .map(|l| {
                let p = l.select(probe)?;
                search.topk(&p, &p, k, Exclude::Identity)
            })
            .collect()
    };
    let la = lists(layers_a)?;
    let lb = lists(layers_b)?;
    let mut grid = Vec::with_capacity(la.len());
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (i, na) in la.iter().enumerate() {
        let mut row = Vec::with_capacity(lb.len());
        for (j, nb) in lb.iter().enumerate() {
            let s = mutual_knn(na, nb)?.mean_score;
            if s > best.2 {
                best = (i, j, s);
            }
            row.push(s);
        }
        grid.push(row);
    }
    Ok(LayerPair {
        index_a: best.0,
        index_b: best.1,
        layer_a: layers_a[best.0].layer(),
        layer_b: layers_b[best.1].layer(),
        score: best.2,
        grid,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecompositionReport {
    /// Fraction of queries whose top-k in space A holds a same-class item.
    pub acc_a: f64,
    pub acc_b: f64,
    /// Fraction where both spaces do.
    pub joint_correct: f64,
    /// Mutual kNN on the same gallery.
    pub strict_agreement: f64,
    pub ipc: usize,
    pub k: usize,
}

/// Decomposition for an explicit query/gallery split. `classes[i]` is the
/// class of row `i` of both feature sets.
pub fn decompose_split<S: NeighborSearch>(
    feat_a: &EmbeddingSet,
    feat_b: &EmbeddingSet,
    classes: &[u32],
    queries: &[usize],
    gallery: &[usize],
    ks: &[usize],
    search: &S,
) -> Result<Vec<DecompositionReport>> {
    check_pair(feat_a, feat_b)?;
    if classes.len() != feat_a.count() {
        return Err(Error::LengthMismatch {
            what: "class labels vs rows",
            left: classes.len(),
            right: feat_a.count(),
        });
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput("query set"));
    }
    if let Some(&q) = gallery.iter().find(|g| queries.contains(g)) {
        return Err(Error::QueryInGallery(q));
    }
    let largest = check_ks(ks, gallery.len())?;
    let na = search.topk(
        &feat_a.select(queries)?,
        &feat_a.select(gallery)?,
        largest,
        Exclude::Nothing,
    )?;
    let nb = search.topk(
        &feat_b.select(queries)?,
        &feat_b.select(gallery)?,
        largest,
        Exclude::Nothing,
    )?;
    let gallery_class: Vec<u32> = gallery.iter().map(|&g| classes[g]).collect();
    let ipc = class_counts_min(&gallery_class);

    ks.iter()
        .map(|&k| {
            let (ta, tb) = (na.truncate(k)?, nb.truncate(k)?);
            let (mut hit_a, mut hit_b, mut joint) = (0usize, 0usize, 0usize);
            for (qi, &q) in queries.iter().enumerate() {
                let c = classes[q];
                let a = ta.row(qi).iter().any(|&g| gallery_class[g as usize] == c);
                let b = tb.row(qi).iter().any(|&g| gallery_class[g as usize] == c);
                hit_a += a as usize;
                hit_b += b as usize;
                joint += (a && b) as usize;
            }
            let nq = queries.len() as f64;
            Ok(DecompositionReport {
                acc_a: hit_a as f64 / nq,
                acc_b: hit_b as f64 / nq,
                joint_correct: joint as f64 / nq,
                strict_agreement: mutual_knn(&ta, &tb)?.mean_score,
                ipc,
                k,
            })
        })
        .collect()
}

fn class_counts_min(classes: &[u32]) -> usize {
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    sorted
        .chunk_by(|a, b| a == b)
        .map(|c| c.len())
        .min()
        .unwrap_or(0)
}

/// Query/gallery split for the labeled protocol: the first row of each class
/// (in row order) is its query, and the gallery takes `ipc` of the remaining
/// members per class, drawn from a seeded per-class shuffle, so galleries for
/// growing `ipc` are nested.
pub fn labeled_split(classes: &[u32], ipc: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if ipc == 0 {
        return Err(Error::InvalidParameter("ipc must be positive".into()));
    }
    let n_classes = classes.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_classes];
    for (i, &c) in classes.iter().enumerate() {
        members[c as usize].push(i);
    }
    let short: Vec<(u32, usize)> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.len().saturating_sub(1) < ipc)
        .map(|(c, m)| (c as u32, m.len().saturating_sub(1)))
        .collect();
    if !short.is_empty() {
        return Err(Error::ClassesTooSmall {
            required: ipc,
            classes: short,
        });
    }
    let mut queries = Vec::with_capacity(n_classes);
    let mut gallery = Vec::with_capacity(n_classes * ipc);
    for (c, m) in members.iter().enumerate() {
        queries.push(m[0]);
        let mut rest = m[1..].to_vec();
        let mut r = rng::substream(seed, rng::streams::DECOMPOSE, c as u64);
        rest.shuffle(&mut r);
        gallery.extend_from_slice(&rest[..ipc]);
    }
    queries.sort_unstable();
    gallery.sort_unstable();
    Ok((queries, gallery))
}

/// The labeled decomposition at one `ipc` for each `k` in `ks`.
pub fn decompose<S: NeighborSearch>(
    feat_a: &EmbeddingSet,
    feat_b: &EmbeddingSet,
    classes: &[u32],
    ipc: usize,
    ks: &[usize],
    seed: u64,
    search: &S,
) -> Result<Vec<DecompositionReport>> {
    let (queries, gallery) = labeled_split(classes, ipc, seed)?;
    let mut out = decompose_split(feat_a, feat_b, classes, &queries, &gallery, ks, search)?;
    for r in &mut out {
        r.ipc = ipc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::SerialSearch;
    use alloc::vec;

    fn list(k: usize, n: usize, idx: Vec<u32>) -> NeighborList {
        NeighborList::from_indices(k, n, idx).unwrap()
    }

    #[test]
    fn hand_enumerated_overlap() {
        let a = list(2, 10, vec![3, 7]);
        let b = list(2, 10, vec![7, 9]);
        let r = mutual_knn(&a, &b).unwrap();
        assert_eq!(r.per_sample, vec![0.5]);
        assert_eq!(r.chance_level, 0.2);
    }

    #[test]
    fn identical_lists_score_one() {
        let a = list(2, 10, vec![3, 7, 1, 2, 0, 9]);
        assert_eq!(mutual_knn(&a, &a).unwrap().mean_score, 1.0);
    }

    #[test]
    fn mismatched_lists_rejected() {
        let a = list(2, 10, vec![3, 7]);
        let b = list(1, 10, vec![3, 7]);
        assert!(mutual_knn(&a, &b).is_err());
        let c = list(2, 10, vec![3, 7, 1, 2]);
        assert_eq!(mutual_knn(&a, &c), Err(Error::CountMismatch(1, 2)));
    }

    #[test]
    fn grouped_counts_same_group_as_match() {
        let a = list(1, 4, vec![0]);
        let b = list(1, 4, vec![1]);
        let groups = [7, 7, 8, 8];
        assert_eq!(grouped_mutual_knn(&a, &b, &groups).unwrap().mean_score, 1.0);
        assert_eq!(mutual_knn(&a, &b).unwrap().mean_score, 0.0);
    }

    #[test]
    fn grouped_multiplicity_is_capped() {
        // A: two items of group 0; B: one item of group 0, one of group 1.
        let a = list(2, 4, vec![0, 1]);
        let b = list(2, 4, vec![2, 3]);
        let groups = [0, 0, 0, 1];
        assert_eq!(
            grouped_mutual_knn(&a, &b, &groups).unwrap().per_sample,
            vec![0.5]
        );
    }

    #[test]
    fn k_sweep_full_gallery_is_one() {
        let a = EmbeddingSet::new(4, 2, 0, vec![1.0, 0.1, 0.2, 1.0, -1.0, 0.3, 0.5, -0.7])
            .unwrap()
            .normalize()
            .unwrap();
        let b = EmbeddingSet::new(4, 2, 0, vec![0.3, 1.0, 1.0, -0.2, 0.1, 0.1, -0.5, -0.4])
            .unwrap()
            .normalize()
            .unwrap();
        let r = k_sweep(&a, &b, &[0, 1, 2, 3], &[1, 3], &SerialSearch::default()).unwrap();
        assert_eq!(r[1].mean_score, 1.0);
        assert!(k_sweep(&a, &b, &[0, 1, 2, 3], &[4], &SerialSearch::default()).is_err());
    }

    #[test]
    fn labeled_split_sizes_and_errors() {
        let classes = [0, 0, 0, 1, 1, 1, 1];
        let (q, g) = labeled_split(&classes, 2, 1).unwrap();
        assert_eq!(q, vec![0, 3]);
        assert_eq!(g.len(), 4);
        assert!(g.iter().all(|i| !q.contains(i)));
        assert_eq!(
            labeled_split(&classes, 3, 1),
            Err(Error::ClassesTooSmall {
                required: 3,
                classes: vec![(0, 2)]
            })
        );
    }
}
