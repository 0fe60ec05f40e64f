//! Mutual k-nearest-neighbor alignment between independently trained
//! representation spaces.
//!
//! This crate is `no_std` (it needs `alloc`) and contains every algorithm of
//! the toolkit: embedding validation and normalization, exact top-k search by
//! inner product, the alignment metrics built on it, perceptual hashing and
//! near-duplicate clustering, the linear trend check, and a synthetic data
//! generator with known ground truth. File formats, parallel execution and the
//! command line live in the `mknn` crate.
//!
//! ```
//! use mknn_core::{EmbeddingSet, knn::{Exclude, SerialSearch, NeighborSearch}, metrics};
//!
//! let a = EmbeddingSet::new(3, 2, 0, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8]).unwrap().normalize().unwrap();
//! let search = SerialSearch::default();
//! let na = search.topk(&a, &a, 1, Exclude::Identity).unwrap();
//! let report = metrics::mutual_knn(&na, &na).unwrap();
//! assert_eq!(report.mean_score, 1.0);
//! ```
#![no_std]

extern crate alloc;

pub mod dedup;
pub mod embedding;
mod error;
pub mod knn;
pub mod manifest;
pub mod metrics;
pub mod phash;
pub mod rng;
pub mod synth;
pub mod trend;
pub mod unionfind;

pub use embedding::{nested_subsample, EmbeddingSet, GallerySelection};
pub use error::{Error, Result};
pub use knn::NeighborList;
pub use manifest::{Manifest, ManifestRow, Modality};
