//! Near-duplicate detection over perceptual hashes, the four-stage gallery
//! dedup pipeline, and many-to-many group construction.
//!
//! Hashes are split into four 16-bit chunks. Two hashes at Hamming distance
//! `t <= 3` differ in at most `t` chunks, so they agree exactly on at least
//! `4 - t` of them; bucketing by exact chunk value therefore finds every such
//! pair. Larger thresholds fall back to an all-pairs scan.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::phash::PerceptualHash;
use crate::rng;
use crate::unionfind::UnionFind;

pub const DEFAULT_THRESHOLD: u32 = 2;
const CHUNKS: usize = 4;
/// Largest threshold for which chunk bucketing is complete.
pub const INDEXED_MAX_THRESHOLD: u32 = 3;

#[inline]
fn chunk(h: u64, c: usize) -> u16 {
    (h >> (48 - 16 * c)) as u16
}

#[inline]
fn agreeing_chunks(a: u64, b: u64) -> (u32, usize) {
    let mut n = 0;
    let mut first = CHUNKS;
    for c in 0..CHUNKS {
        if chunk(a, c) == chunk(b, c) {
            n += 1;
            first = first.min(c);
        }
    }
    (n, first)
}

/// Exact-match index over chunk values.
#[derive(Debug, Clone)]
pub struct HashIndex {
    hashes: Vec<u64>,
    tables: [Vec<(u16, u32)>; CHUNKS],
}

impl HashIndex {
    pub fn new(hashes: &[PerceptualHash]) -> Self {
        let hashes: Vec<u64> = hashes.iter().map(|h| h.0).collect();
        let tables = core::array::from_fn(|c| {
            let mut t: Vec<(u16, u32)> = hashes
                .iter()
                .enumerate()
                .map(|(i, &h)| (chunk(h, c), i as u32))
                .collect();
            t.sort_unstable();
            t
        });
        Self { hashes, tables }
    }

    /// Indexed hashes within `threshold` of `h`, ascending.
    pub fn within(&self, h: PerceptualHash, threshold: u32) -> Vec<usize> {
        let mut out = Vec::new();
        if threshold > INDEXED_MAX_THRESHOLD {
            out.extend(
                self.hashes
                    .iter()
                    .enumerate()
                    .filter(|(_, &g)| (g ^ h.0).count_ones() <= threshold)
                    .map(|(i, _)| i),
            );
            return out;
        }
        for (c, table) in self.tables.iter().enumerate() {
            let key = chunk(h.0, c);
            let start = table.partition_point(|&(v, _)| v < key);
            for &(v, i) in &table[start..] {
                if v != key {
                    break;
                }
                if (self.hashes[i as usize] ^ h.0).count_ones() <= threshold {
                    out.push(i as usize);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Distinct hash values and, for every input, the position of its value.
#[derive(Debug, Clone)]
pub struct UniqueHashes {
    pub values: Vec<u64>,
    pub of_input: Vec<u32>,
}

impl UniqueHashes {
    pub fn new(hashes: &[PerceptualHash]) -> Self {
        let mut order: Vec<u32> = (0..hashes.len() as u32).collect();
        order.sort_unstable_by_key(|&i| (hashes[i as usize].0, i));
        let mut values = Vec::new();
        let mut of_input = alloc::vec![0u32; hashes.len()];
        for &i in &order {
            let h = hashes[i as usize].0;
            if values.last() != Some(&h) {
                values.push(h);
            }
            of_input[i as usize] = (values.len() - 1) as u32;
        }
        Self { values, of_input }
    }
}

/// Pairs `(i, j)`, `i < j`, of unique values within `threshold` whose first
/// agreeing chunk is `c`. Across the four chunks each qualifying pair is
/// produced exactly once. Requires `threshold <= INDEXED_MAX_THRESHOLD`.
pub fn chunk_pairs(values: &[u64], c: usize, threshold: u32) -> Vec<(u32, u32)> {
    debug_assert!(threshold <= INDEXED_MAX_THRESHOLD);
    let need = CHUNKS as u32 - threshold;
    let mut table: Vec<(u16, u32)> = values
        .iter()
        .enumerate()
        .map(|(i, &h)| (chunk(h, c), i as u32))
        .collect();
    table.sort_unstable();
    let mut pairs = Vec::new();
    for run in table.chunk_by(|a, b| a.0 == b.0) {
        for (x, &(_, i)) in run.iter().enumerate() {
            for &(_, j) in &run[x + 1..] {
                let (a, b) = (values[i as usize], values[j as usize]);
                let (agree, first) = agreeing_chunks(a, b);
                if first == c && agree >= need && (a ^ b).count_ones() <= threshold {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
        }
    }
    pairs
}

/// All-pairs scan over unique values.
pub fn brute_force_pairs(values: &[u64], threshold: u32) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            if (values[i] ^ values[j]).count_ones() <= threshold {
                pairs.push((i as u32, j as u32));
            }
        }
    }
    pairs
}

/// Connected components of the graph joining inputs whose unique values are
/// linked by `pairs` (identical values are always joined).
pub fn clusters_from_pairs(unique: &UniqueHashes, pairs: &[(u32, u32)]) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(unique.values.len());
    for &(i, j) in pairs {
        uf.union(i as usize, j as usize);
    }
    let mut slot = alloc::vec![usize::MAX; unique.values.len()];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &u) in unique.of_input.iter().enumerate() {
        let r = uf.find(u as usize);
        if slot[r] == usize::MAX {
            slot[r] = out.len();
            out.push(Vec::new());
        }
        out[slot[r]].push(i);
    }
    out
}

/// Transitive closure of `hamming <= threshold`: every input appears in
/// exactly one cluster, clusters are sorted ascending and ordered by their
/// smallest member.
pub fn find_near_duplicates(hashes: &[PerceptualHash], threshold: u32) -> Vec<Vec<usize>> {
    let unique = UniqueHashes::new(hashes);
    let pairs = if threshold <= INDEXED_MAX_THRESHOLD {
        (0..CHUNKS)
            .flat_map(|c| chunk_pairs(&unique.values, c, threshold))
            .collect()
    } else {
        brute_force_pairs(&unique.values, threshold)
    };
    clusters_from_pairs(&unique, &pairs)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageStats {
    pub duplicates_with_queries: usize,
    pub duplicates_within_gallery: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DedupStats {
    pub raw_pool: usize,
    pub image: StageStats,
    pub pool_after_image_dedup: usize,
    pub caption: StageStats,
    pub final_pool_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DedupResult {
    /// Removed by the image or caption match against the query set.
    pub removed_vs_queries: Vec<usize>,
    /// Removed as a later occurrence of a gallery duplicate.
    pub removed_within: Vec<usize>,
    pub kept: Vec<usize>,
    /// Near-duplicate image clusters with more than one member among the
    /// items that survived the query pass.
    pub image_clusters: Vec<Vec<usize>>,
    /// Exact caption clusters with more than one member among the items that
    /// survived the first three stages.
    pub caption_clusters: Vec<Vec<usize>>,
    pub stats: DedupStats,
}

/// Runs, in order: image match against queries, image dedup within the
/// gallery (keep first), caption match against queries, caption dedup within
/// the gallery (keep first).
pub fn dedup_gallery<S: AsRef<str>>(
    gallery_hashes: &[PerceptualHash],
    query_hashes: &[PerceptualHash],
    gallery_captions: &[S],
    query_captions: &[S],
    threshold: u32,
) -> Result<DedupResult> {
    if gallery_hashes.len() != gallery_captions.len() {
        return Err(Error::LengthMismatch {
            what: "gallery hashes vs captions",
            left: gallery_hashes.len(),
            right: gallery_captions.len(),
        });
    }
    if query_hashes.len() != query_captions.len() {
        return Err(Error::LengthMismatch {
            what: "query hashes vs captions",
            left: query_hashes.len(),
            right: query_captions.len(),
        });
    }
    let n = gallery_hashes.len();
    let mut stats = DedupStats {
        raw_pool: n,
        ..DedupStats::default()
    };
    let mut removed_vs_queries = Vec::new();
    let mut removed_within = Vec::new();

    let qindex = HashIndex::new(query_hashes);
    let mut alive: Vec<usize> = Vec::with_capacity(n);
    for (i, &h) in gallery_hashes.iter().enumerate() {
        if qindex.within(h, threshold).is_empty() {
            alive.push(i);
        } else {
            removed_vs_queries.push(i);
        }
    }
    stats.image.duplicates_with_queries = removed_vs_queries.len();

    let survivors: Vec<PerceptualHash> = alive.iter().map(|&i| gallery_hashes[i]).collect();
    let mut image_clusters = Vec::new();
    let mut next = Vec::with_capacity(alive.len());
    for cluster in find_near_duplicates(&survivors, threshold) {
        next.push(alive[cluster[0]]);
        if cluster.len() > 1 {
            removed_within.extend(cluster[1..].iter().map(|&c| alive[c]));
            image_clusters.push(cluster.iter().map(|&c| alive[c]).collect::<Vec<_>>());
        }
    }
    next.sort_unstable();
    alive = next;
    stats.image.duplicates_within_gallery = removed_within.len();
    stats.pool_after_image_dedup = alive.len();

    let query_text: BTreeSet<&str> = query_captions.iter().map(|s| s.as_ref()).collect();
    let before = removed_vs_queries.len();
    alive.retain(|&i| {
        let hit = query_text.contains(gallery_captions[i].as_ref());
        if hit {
            removed_vs_queries.push(i);
        }
        !hit
    });
    stats.caption.duplicates_with_queries = removed_vs_queries.len() - before;

    let mut by_caption: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &alive {
        by_caption
            .entry(gallery_captions[i].as_ref())
            .or_default()
            .push(i);
    }
    let before = removed_within.len();
    let mut caption_clusters: Vec<Vec<usize>> = Vec::new();
    let mut kept = Vec::with_capacity(alive.len());
    for members in by_caption.into_values() {
        kept.push(members[0]);
        if members.len() > 1 {
            removed_within.extend_from_slice(&members[1..]);
            caption_clusters.push(members);
        }
    }
    caption_clusters.sort_unstable_by_key(|c| c[0]);
    kept.sort_unstable();
    stats.caption.duplicates_within_gallery = removed_within.len() - before;
    stats.final_pool_size = kept.len();

    removed_vs_queries.sort_unstable();
    removed_within.sort_unstable();
    Ok(DedupResult {
        removed_vs_queries,
        removed_within,
        kept,
        image_clusters,
        caption_clusters,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GroupDirection {
    /// One caption, many images: group by caption, dedup images within.
    TextToImages,
    /// One image, many captions: group by image key, dedup captions within.
    ImageToTexts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupParams {
    pub min_multiplicity: usize,
    pub per_group_take: usize,
    /// Seeded subsample of the qualifying groups, when set.
    pub max_groups: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Group {
    pub key: String,
    /// Selected row indices, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupStats {
    pub unique_keys: usize,
    /// Groups with at least `min_multiplicity` rows before within-group dedup.
    pub qualifying_before_dedup: usize,
    /// Groups with at least `min_multiplicity` unique members.
    pub qualifying_after_dedup: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupDataset {
    pub direction: GroupDirection,
    pub groups: Vec<Group>,
    pub min_multiplicity: usize,
    pub per_group_take: usize,
    pub stats: GroupStats,
}

impl GroupDataset {
    /// `(row index, group ordinal)` in group order.
    pub fn flat(&self) -> Vec<(usize, usize)> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, grp)| grp.members.iter().map(move |&m| (m, g)))
            .collect()
    }
}

/// Builds a one-to-many dataset. `image_keys[i]` and `captions[i]` identify
/// the two sides of row `i`; groups are keyed by the fixed side and
/// deduplicated (keep first) on the varying side before counting.
pub fn build_groups<S: AsRef<str>>(
    image_keys: &[S],
    captions: &[S],
    direction: GroupDirection,
    params: GroupParams,
) -> Result<GroupDataset> {
    if image_keys.len() != captions.len() {
        return Err(Error::LengthMismatch {
            what: "image keys vs captions",
            left: image_keys.len(),
            right: captions.len(),
        });
    }
    if params.min_multiplicity < params.per_group_take {
        return Err(Error::InvalidParameter(alloc::format!(
            "min_multiplicity {} is below per_group_take {}",
            params.min_multiplicity,
            params.per_group_take
        )));
    }
    if params.per_group_take == 0 {
        return Err(Error::InvalidParameter(
            "per_group_take must be positive".into(),
        ));
    }
    let (fixed, varying) = match direction {
        GroupDirection::TextToImages => (captions, image_keys),
        GroupDirection::ImageToTexts => (image_keys, captions),
    };
    let mut order: Vec<&str> = Vec::new();
    let mut rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, key) in fixed.iter().enumerate() {
        let key = key.as_ref();
        let entry = rows.entry(key).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(i);
    }
    let mut before = 0;
    let mut qualifying: Vec<(&str, Vec<usize>)> = Vec::new();
    for key in &order {
        let members = &rows[key];
        if members.len() >= params.min_multiplicity {
            before += 1;
        }
        let mut seen = BTreeSet::new();
        let unique: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| seen.insert(varying[i].as_ref()))
            .collect();
        if unique.len() >= params.min_multiplicity {
            qualifying.push((key, unique));
        }
    }
    let after = qualifying.len();
    if let Some(max) = params.max_groups {
        if max < qualifying.len() {
            let mut pick: Vec<usize> = (0..qualifying.len()).collect();
            pick.shuffle(&mut rng::stream(params.seed, rng::streams::GROUPS));
            pick.truncate(max);
            pick.sort_unstable();
            qualifying = pick
                .into_iter()
                .map(|p| core::mem::take(&mut qualifying[p]))
                .collect();
        }
    }
    let groups = qualifying
        .into_iter()
        .map(|(key, mut members)| {
            let first = members[0] as u64;
            members.shuffle(&mut rng::substream(
                params.seed,
                rng::streams::GROUPS,
                first,
            ));
            members.truncate(params.per_group_take);
            members.sort_unstable();
            Group {
                key: key.into(),
                members,
            }
        })
        .collect();
    Ok(GroupDataset {
        direction,
        groups,
        min_multiplicity: params.min_multiplicity,
        per_group_take: params.per_group_take,
        stats: GroupStats {
            unique_keys: order.len(),
            qualifying_before_dedup: before,
            qualifying_after_dedup: after,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::{format, vec};

    fn h(v: u64) -> PerceptualHash {
        PerceptualHash(v)
    }

    #[test]
    fn transitive_cluster() {
        let base = 0x1234_5678_9abc_def0u64;
        let hashes = [
            h(base),
            h(base ^ 1 << 3),
            h(base ^ 1 << 3 ^ 1 << 9),
            h(!base),
        ];
        assert_eq!(
            find_near_duplicates(&hashes, 2),
            vec![vec![0, 1, 2], vec![3]]
        );
    }

    #[test]
    fn query_index_probe() {
        let idx = HashIndex::new(&[h(0), h(0xFFFF), h(u64::MAX)]);
        assert_eq!(idx.within(h(0b11), 2), vec![0]);
        assert_eq!(idx.within(h(0xFFFC), 2), vec![1]);
        assert!(idx.within(h(0xF0F0_F0F0), 2).is_empty());
    }

    #[test]
    fn byte_identical_query_removed() {
        let r = dedup_gallery(&[h(5), h(99)], &[h(5)], &["a", "b"], &["q"], 2).unwrap();
        assert_eq!(r.removed_vs_queries, vec![0]);
        assert_eq!(r.stats.image.duplicates_with_queries, 1);
        assert_eq!(r.kept, vec![1]);
    }

    #[test]
    fn later_caption_duplicate_removed() {
        let r = dedup_gallery(&[h(0), h(u64::MAX)], &[], &["same", "same"], &[], 2).unwrap();
        assert_eq!(r.removed_within, vec![1]);
        assert_eq!(r.stats.caption.duplicates_within_gallery, 1);
        assert_eq!(r.caption_clusters, vec![vec![0, 1]]);
    }

    #[test]
    fn image_pass_takes_attribution() {
        // item 1 duplicates item 0 both as an image and as a caption
        let r = dedup_gallery(&[h(0), h(1), h(u64::MAX)], &[], &["x", "x", "y"], &[], 2).unwrap();
        assert_eq!(r.stats.image.duplicates_within_gallery, 1);
        assert_eq!(r.stats.caption.duplicates_within_gallery, 0);
        assert_eq!(r.stats.pool_after_image_dedup, 2);
        assert_eq!(r.kept, vec![0, 2]);
    }

    #[test]
    fn length_mismatch() {
        assert!(dedup_gallery(&[h(0)], &[], &["a", "b"], &[], 2).is_err());
    }

    fn params(min: usize, take: usize) -> GroupParams {
        GroupParams {
            min_multiplicity: min,
            per_group_take: take,
            max_groups: None,
            seed: 3,
        }
    }

    #[test]
    fn group_with_duplicates_keeps_unique_members() {
        let images: Vec<String> = ["a", "b", "a", "c", "d", "e", "c", "f"]
            .iter()
            .map(|s| format!("img-{s}"))
            .collect();
        let captions = vec![String::from("cap"); 8];
        let g = build_groups(
            &images,
            &captions,
            GroupDirection::TextToImages,
            params(5, 5),
        )
        .unwrap();
        assert_eq!(g.groups.len(), 1);
        let members = &g.groups[0].members;
        assert_eq!(members.len(), 5);
        let keys: BTreeSet<&str> = members.iter().map(|&m| images[m].as_str()).collect();
        assert_eq!(keys.len(), 5);
    }

    #[test]
    fn small_group_dropped_and_param_check() {
        let images = vec!["1", "2", "3", "4"];
        let captions = vec!["c"; 4];
        let g = build_groups(
            &images,
            &captions,
            GroupDirection::TextToImages,
            params(5, 5),
        )
        .unwrap();
        assert!(g.groups.is_empty());
        assert!(build_groups(
            &images,
            &captions,
            GroupDirection::TextToImages,
            params(4, 5)
        )
        .is_err());
    }
}
