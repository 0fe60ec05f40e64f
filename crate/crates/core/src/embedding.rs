//! Embedding matrices and gallery subsampling.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on the Euclidean norm of rows flagged as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// An `count x dim` row-major matrix of `f32` feature vectors for one model
/// layer.
///
/// Values are always finite. The `normalized` flag is only set by
/// [`EmbeddingSet::normalize`] or [`EmbeddingSet::assume_normalized`], both of
/// which check that every row has unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    count: usize,
    dim: usize,
    layer: u32,
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingSet {
    pub fn new(count: usize, dim: usize, layer: u32, values: Vec<f32>) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(Error::Empty);
        }
        let expected = count.checked_mul(dim).ok_or(Error::Empty)?;
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                count,
                dim,
                expected,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            count,
            dim,
            layer,
            values,
            normalized: false,
        })
    }

    /// Marks an already unit-norm matrix as normalized after checking every row.
    pub fn assume_normalized(mut self) -> Result<Self> {
        for i in 0..self.count {
            let norm = row_norm(self.row(i));
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::NotUnitNorm { row: i, norm });
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    pub fn with_layer(mut self, layer: u32) -> Self {
        self.layer = layer;
        self
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// L2-normalizes every row. Norms are accumulated in `f64`.
    ///
    /// A zero row is an error naming its index.
    pub fn normalize(&self) -> Result<Self> {
        let mut values = Vec::with_capacity(self.values.len());
        for (i, row) in self.rows().enumerate() {
            let norm = row_norm(row);
            if norm == 0.0 {
                return Err(Error::ZeroNorm(i));
            }
            values.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
        Ok(Self {
            count: self.count,
            dim: self.dim,
            layer: self.layer,
            values,
            normalized: true,
        })
    }

    /// Copies the given rows, in the given order, into a new set. The
    /// normalization flag carries over.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty);
        }
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.count {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.count,
                });
            }
            values.extend_from_slice(self.row(i));
        }
        Ok(Self {
            count: indices.len(),
            dim: self.dim,
            layer: self.layer,
            values,
            normalized: self.normalized,
        })
    }
}

fn row_norm(row: &[f32]) -> f64 {
    libm::sqrt(row.iter().map(|&v| v as f64 * v as f64).sum::<f64>())
}

/// Nested gallery selections drawn from one seeded permutation of the pool
/// minus the query rows.
///
/// The gallery at `sizes[j]` is the first `sizes[j]` entries of the
/// permutation, so every smaller gallery is contained in every larger one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GallerySelection {
    pub base_size: usize,
    pub sizes: Vec<usize>,
    pub seed: u64,
    order: Vec<usize>,
}

impl GallerySelection {
    /// The drawn permutation prefix, of length `max(sizes)`.
    pub fn permutation(&self) -> &[usize] {
        &self.order
    }

    /// Pool indices of the gallery at `size`, sorted ascending.
    pub fn indices(&self, size: usize) -> Result<Vec<usize>> {
        if !self.sizes.contains(&size) {
            return Err(Error::InvalidParameter(alloc::format!(
                "gallery size {size} is not part of this selection"
            )));
        }
        let mut idx = self.order[..size].to_vec();
        idx.sort_unstable();
        Ok(idx)
    }

    /// All nested index lists, one per size, each sorted ascending.
    pub fn indices_per_size(&self) -> Vec<Vec<usize>> {
        self.sizes
            .iter()
            .map(|&s| {
                let mut idx = self.order[..s].to_vec();
                idx.sort_unstable();
                idx
            })
            .collect()
    }
}

/// Draws nested galleries of the requested `sizes` from `[0, pool_size)`
/// excluding `query_indices`.
pub fn nested_subsample(
    pool_size: usize,
    sizes: &[usize],
    query_indices: &[usize],
    seed: u64,
) -> Result<GallerySelection> {
    if sizes.is_empty() {
        return Err(Error::EmptyInput("gallery sizes"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::NotAscending);
    }
    let mut is_query = alloc::vec![false; pool_size];
    for &q in query_indices {
        if q >= pool_size {
            return Err(Error::IndexOutOfRange {
                index: q,
                len: pool_size,
            });
        }
        is_query[q] = true;
    }
    let mut order: Vec<usize> = (0..pool_size).filter(|&i| !is_query[i]).collect();
    let available = order.len();
    let largest = *sizes.last().unwrap();
    if largest > available {
        return Err(Error::SizeExceedsPool {
            size: largest,
            available,
        });
    }
    if sizes[0] == 0 {
        return Err(Error::InvalidParameter(
            "gallery size must be positive".into(),
        ));
    }
    let mut rng = rng::stream(seed, rng::streams::GALLERY);
    order.shuffle(&mut rng);
    order.truncate(largest);
    Ok(GallerySelection {
        base_size: sizes[0],
        sizes: sizes.to_vec(),
        seed,
        order,
    })
}
