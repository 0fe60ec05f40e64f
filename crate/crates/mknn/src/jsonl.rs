//! JSON Lines files: manifests, neighbor dumps and hash caches.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mknn_core::knn::NeighborList;
use mknn_core::phash::PerceptualHash;
use mknn_core::{Manifest, ManifestRow};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{data, io, Error, Result};

/// One value per non-blank line; errors carry the 1-based line number.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| Error::Invalid(e.to_string()))?;
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let rows: Vec<ManifestRow> = read(path)?;
    Manifest::new(rows).map_err(data(path))
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write(path, manifest.rows())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub gallery_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub query_id: String,
    pub neighbors: Vec<NeighborEntry>,
}

/// Dumps `list` with row positions resolved to ids.
pub fn write_neighbors(
    path: &Path,
    list: &NeighborList,
    query_ids: &[&str],
    gallery_ids: &[&str],
) -> Result<()> {
    if query_ids.len() != list.query_count() || gallery_ids.len() != list.gallery_size() {
        return Err(Error::Invalid(format!(
            "{}: neighbor list shape does not match the id lists",
            path.display()
        )));
    }
    let records = (0..list.query_count()).map(|q| NeighborRecord {
        query_id: query_ids[q].to_string(),
        neighbors: list
            .row(q)
            .iter()
            .zip(list.similarities(q))
            .map(|(&g, &s)| NeighborEntry {
                gallery_id: gallery_ids[g as usize].to_string(),
                similarity: s,
            })
            .collect(),
    });
    write(path, records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashRecord {
    pub id: String,
    pub phash_hex: String,
}

pub fn read_hash_cache(path: &Path) -> Result<Vec<(String, PerceptualHash)>> {
    let records: Vec<HashRecord> = read(path)?;
    records
        .into_iter()
        .map(|r| {
            let h = PerceptualHash::from_hex(&r.phash_hex).map_err(data(path))?;
            Ok((r.id, h))
        })
        .collect()
}

pub fn write_hash_cache<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, PerceptualHash)>,
) -> Result<()> {
    write(
        path,
        entries.into_iter().map(|(id, h)| HashRecord {
            id: id.to_string(),
            phash_hex: h.to_hex(),
        }),
    )
}
