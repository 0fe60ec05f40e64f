//! Paired synthetic representation spaces with known structure.
//!
//! Each source draws a shared latent `z`. A row of modality A is
//! `R_a [z; u_a] + noise_a * e`, then L2-normalized, where `R_a` is a seeded
//! random orthogonal map, `u_a` a per-variant unique component filling the
//! remaining `dim_a - shared_dim` coordinates and `e` standard normal; B is
//! built the same way with its own map. With no noise and no unique
//! coordinates B is an isometric image of A; with `shared_dim = 0` the two
//! spaces are independent.
//!
//! Rows are laid out source-major: source `s` owns rows
//! `s * M .. (s + 1) * M` with `M = max(multiplicity_a, multiplicity_b)`.
//! Row `r` uses variant `(r % M) % multiplicity` of each modality, so a
//! modality with multiplicity 1 repeats one vector across the source's rows.

use alloc::format;
use alloc::vec::Vec;

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestRow, Modality};
use crate::rng::{self, Gaussian};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthSpec {
    pub n_sources: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub shared_dim: usize,
    pub noise_a: f64,
    pub noise_b: f64,
    pub classes: Option<usize>,
    pub group_multiplicity_a: usize,
    pub group_multiplicity_b: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_sources: 256,
            dim_a: 32,
            dim_b: 32,
            shared_dim: 16,
            noise_a: 0.0,
            noise_b: 0.0,
            classes: None,
            group_multiplicity_a: 1,
            group_multiplicity_b: 1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n_sources == 0 || self.dim_a == 0 || self.dim_b == 0 {
            return bad("n_sources and dimensions must be positive");
        }
        if self.shared_dim > self.dim_a.min(self.dim_b) {
            return bad("shared_dim exceeds a modality dimension");
        }
        if !(self.noise_a >= 0.0 && self.noise_b >= 0.0)
            || !self.noise_a.is_finite()
            || !self.noise_b.is_finite()
        {
            return bad("noise levels must be finite and non-negative");
        }
        let (ma, mb) = (self.group_multiplicity_a, self.group_multiplicity_b);
        if ma == 0 || mb == 0 {
            return bad("group multiplicities must be at least 1");
        }
        if !(ma == 1 || mb == 1 || ma == mb) {
            return bad("group multiplicities must be equal or one of them 1");
        }
        if let Some(c) = self.classes {
            if c == 0 || self.shared_dim == 0 {
                return bad("classes need a positive count and a shared latent");
            }
        }
        Ok(())
    }

    pub fn rows_per_source(&self) -> usize {
        self.group_multiplicity_a.max(self.group_multiplicity_b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub a: EmbeddingSet,
    pub b: EmbeddingSet,
    pub manifest_a: Manifest,
    pub manifest_b: Manifest,
    /// Class per row when classes were requested.
    pub classes: Option<Vec<u32>>,
    /// Source (group) per row.
    pub groups: Vec<u32>,
}

/// Random `dim x dim` orthogonal matrix, row-major, from modified
/// Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(dim: usize, seed: u64, name: &str) -> Vec<f64> {
    let mut g = Gaussian::new(rng::stream(seed, name));
    loop {
        let mut m: Vec<f64> = (0..dim * dim).map(|_| g.sample()).collect();
        if gram_schmidt(&mut m, dim) {
            return m;
        }
    }
}

fn gram_schmidt(m: &mut [f64], dim: usize) -> bool {
    for i in 0..dim {
        for j in 0..i {
            let dot: f64 = (0..dim).map(|t| m[i * dim + t] * m[j * dim + t]).sum();
            for t in 0..dim {
                m[i * dim + t] -= dot * m[j * dim + t];
            }
        }
        let norm = libm::sqrt(
            (0..dim)
                .map(|t| m[i * dim + t] * m[i * dim + t])
                .sum::<f64>(),
        );
        if norm < 1e-9 {
            return false;
        }
        for t in 0..dim {
            m[i * dim + t] /= norm;
        }
    }
    true
}

fn apply(rot: &[f64], x: &[f64], out: &mut Vec<f32>) {
    let dim = x.len();
    for r in 0..dim {
        let row = &rot[r * dim..(r + 1) * dim];
        out.push(row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() as f32);
    }
}

struct Modal {
    dim: usize,
    noise: f64,
    multiplicity: usize,
    rot: Vec<f64>,
}

impl Modal {
    /// Variant vectors for one source, pre-normalization.
    fn variants(
        &self,
        z: &[f64],
        g: &mut Gaussian<rand_chacha::ChaCha8Rng>,
        out: &mut Vec<Vec<f32>>,
    ) {
        out.clear();
        let mut x = Vec::with_capacity(self.dim);
        for _ in 0..self.multiplicity {
            x.clear();
            x.extend_from_slice(z);
            while x.len() < self.dim {
                x.push(g.sample());
            }
            for v in &mut x {
                *v += self.noise * g.sample();
            }
            let mut row = Vec::with_capacity(self.dim);
            apply(&self.rot, &x, &mut row);
            out.push(row);
        }
    }
}

/// Deterministic in `spec`: per-source values come from per-source streams.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let per = spec.rows_per_source();
    let n_rows = spec.n_sources * per;
    let modal_a = Modal {
        dim: spec.dim_a,
        noise: spec.noise_a,
        multiplicity: spec.group_multiplicity_a,
        rot: random_orthogonal(spec.dim_a, spec.seed, "synth-rotation-a"),
    };
    let modal_b = Modal {
        dim: spec.dim_b,
        noise: spec.noise_b,
        multiplicity: spec.group_multiplicity_b,
        rot: random_orthogonal(spec.dim_b, spec.seed, "synth-rotation-b"),
    };
    let centroids: Option<Vec<f64>> = spec.classes.map(|c| {
        let mut g = Gaussian::new(rng::stream(spec.seed, "synth-classes"));
        (0..c * spec.shared_dim).map(|_| g.sample()).collect()
    });

    let mut va = Vec::with_capacity(n_rows * spec.dim_a);
    let mut vb = Vec::with_capacity(n_rows * spec.dim_b);
    let mut classes = spec.classes.map(|_| Vec::with_capacity(n_rows));
    let mut groups = Vec::with_capacity(n_rows);
    let (mut rows_a, mut rows_b) = (Vec::new(), Vec::new());
    for s in 0..spec.n_sources {
        let mut g = Gaussian::new(rng::substream(spec.seed, rng::streams::SYNTH, s as u64));
        let z: Vec<f64> = (0..spec.shared_dim).map(|_| g.sample()).collect();
        modal_a.variants(&z, &mut g, &mut rows_a);
        modal_b.variants(&z, &mut g, &mut rows_b);
        let label = centroids.as_ref().map(|c| nearest_centroid(&z, c));
        for r in 0..per {
            va.extend_from_slice(&rows_a[r % spec.group_multiplicity_a]);
            vb.extend_from_slice(&rows_b[r % spec.group_multiplicity_b]);
            groups.push(s as u32);
            if let (Some(cls), Some(l)) = (classes.as_mut(), label) {
                cls.push(l);
            }
        }
    }
    let a = EmbeddingSet::new(n_rows, spec.dim_a, 0, va)?.normalize()?;
    let b = EmbeddingSet::new(n_rows, spec.dim_b, 0, vb)?.normalize()?;
    let manifest = |modality: Modality| {
        let rows = (0..n_rows)
            .map(|r| {
                let s = r / per;
                ManifestRow {
                    id: format!(
                        "{}-{r}",
                        if modality == Modality::Image {
                            "img"
                        } else {
                            "txt"
                        }
                    ),
                    modality,
                    source_id: format!("src-{s}"),
                    group_id: Some(format!("src-{s}")),
                    class_label: classes.as_ref().map(|c| format!("class-{}", c[r])),
                }
            })
            .collect();
        Manifest::new(rows)
    };
    Ok(SynthOutput {
        manifest_a: manifest(Modality::Image)?,
        manifest_b: manifest(Modality::Text)?,
        a,
        b,
        classes,
        groups,
    })
}

fn nearest_centroid(z: &[f64], centroids: &[f64]) -> u32 {
    let d = z.len();
    let mut best = (0u32, f64::INFINITY);
    for (c, cen) in centroids.chunks_exact(d).enumerate() {
        let dist: f64 = z.iter().zip(cen).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.1 {
            best = (c as u32, dist);
        }
    }
    best.0
}
