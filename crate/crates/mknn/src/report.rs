//! CSV and JSON outputs. Every CSV has a fixed header, checked on write and
//! on read back.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};

pub const CURVE_HEADER: &[&str] = &[
    "experiment",
    "model_pair",
    "gallery_size",
    "k",
    "mean_score",
    "chance_level",
];
pub const DECOMPOSE_HEADER: &[&str] = &[
    "experiment",
    "model_pair",
    "ipc",
    "k",
    "acc_a",
    "acc_b",
    "joint_correct",
    "strict_agreement",
];
pub const SCORES_HEADER: &[&str] = &[
    "model_id",
    "population",
    "benchmark",
    "vision_variant",
    "performance",
    "alignment",
];
pub const TREND_HEADER: &[&str] = &["benchmark", "r2_avg_base", "r2_avg_new", "variants"];
pub const TREND_CELLS_HEADER: &[&str] = &[
    "benchmark",
    "vision_variant",
    "slope",
    "intercept",
    "r2_base",
    "r2_new",
    "n_base",
    "n_new",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub experiment: String,
    pub model_pair: String,
    pub gallery_size: usize,
    pub k: usize,
    pub mean_score: f64,
    pub chance_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeRow {
    pub experiment: String,
    pub model_pair: String,
    pub ipc: usize,
    pub k: usize,
    pub acc_a: f64,
    pub acc_b: f64,
    pub joint_correct: f64,
    pub strict_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCellRow {
    pub benchmark: String,
    pub vision_variant: String,
    pub slope: f64,
    pub intercept: f64,
    pub r2_base: f64,
    pub r2_new: f64,
    pub n_base: usize,
    pub n_new: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendAverageRow {
    pub benchmark: String,
    pub r2_avg_base: f64,
    pub r2_avg_new: f64,
    pub variants: usize,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io(path))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(io(path))?;
    drop(w);
    let back: Vec<csv::StringRecord> = read_records(path, header)?;
    if back.len() != rows.len() {
        return Err(Error::Invalid(format!(
            "{}: wrote {} rows but read back {}",
            path.display(),
            rows.len(),
            back.len()
        )));
    }
    Ok(())
}

pub fn header_of(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let h = r.headers().map_err(|e| csv_error(path, e))?;
    Ok(h.iter().map(str::to_string).collect())
}

fn check_header(path: &Path, found: &[String], header: &[&str]) -> Result<()> {
    if found.iter().map(String::as_str).ne(header.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "header {:?} does not match expected {:?}",
                found.join(","),
                header.join(",")
            ),
        });
    }
    Ok(())
}

fn read_records(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    check_header(path, &header_of(path)?, header)?;
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.records()
        .map(|rec| rec.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Reads typed rows after checking the header exactly.
pub fn read_csv<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    check_header(path, &header_of(path)?, header)?;
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| csv_error(path, e)))
        .collect()
}

/// What every JSON report carries around its result.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
    pub result: &'a R,
}

impl<'a, C: Serialize, R: Serialize> Envelope<'a, C, R> {
    pub fn new(command: &'a str, config: &'a C, result: &'a R) -> Self {
        Self {
            tool: "mknn",
            version: crate::VERSION,
            command,
            config,
            result,
        }
    }
}

/// Pretty JSON with a trailing newline, parsed back before returning.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    let file = File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(io(path))?;
    w.write_all(b"\n").map_err(io(path))?;
    w.flush().map_err(io(path))?;
    drop(w);
    let back = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str::<serde_json::Value>(&back).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    Ok(())
}

/// A run output that `report` can merge.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "schema", content = "rows", rename_all = "snake_case")]
pub enum Table {
    Curve(Vec<CurveRow>),
    Decompose(Vec<DecomposeRow>),
}

impl Table {
    pub fn header(&self) -> &'static [&'static str] {
        match self {
            Table::Curve(_) => CURVE_HEADER,
            Table::Decompose(_) => DECOMPOSE_HEADER,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Table::Curve(r) => r.len(),
            Table::Decompose(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        match self {
            Table::Curve(r) => write_csv(path, CURVE_HEADER, r),
            Table::Decompose(r) => write_csv(path, DECOMPOSE_HEADER, r),
        }
    }
}

/// Reads a curve or decomposition CSV, telling them apart by header.
pub fn read_table(path: &Path) -> Result<Table> {
    let header = header_of(path)?;
    if header
        .iter()
        .map(String::as_str)
        .eq(CURVE_HEADER.iter().copied())
    {
        Ok(Table::Curve(read_csv(path, CURVE_HEADER)?))
    } else if header
        .iter()
        .map(String::as_str)
        .eq(DECOMPOSE_HEADER.iter().copied())
    {
        Ok(Table::Decompose(read_csv(path, DECOMPOSE_HEADER)?))
    } else {
        Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "header {:?} matches neither {:?} nor {:?}",
                header.join(","),
                CURVE_HEADER.join(","),
                DECOMPOSE_HEADER.join(",")
            ),
        })
    }
}

type Key = (String, String, usize, usize);

fn merge_rows<T: Clone>(inputs: &[(PathBuf, Vec<T>)], key: impl Fn(&T) -> Key) -> Result<Vec<T>> {
    let mut seen: BTreeMap<Key, (&Path, T)> = BTreeMap::new();
    for (path, rows) in inputs {
        for row in rows {
            let k = key(row);
            if let Some((first, _)) = seen.get(&k) {
                return Err(Error::Invalid(format!(
                    "duplicate row (experiment {:?}, model_pair {:?}, size {}, k {}) in {} and {}",
                    k.0,
                    k.1,
                    k.2,
                    k.3,
                    first.display(),
                    path.display()
                )));
            }
            seen.insert(k, (path.as_path(), row.clone()));
        }
    }
    Ok(seen.into_values().map(|(_, r)| r).collect())
}

/// Union of same-schema tables, sorted by (experiment, model pair, size or
/// ipc, k). A key present twice is an error naming both files.
pub fn merge(inputs: Vec<(PathBuf, Table)>) -> Result<Table> {
    let Some((first_path, first)) = inputs.first() else {
        return Err(Error::Invalid("report needs at least one input".into()));
    };
    if let Some((p, _)) = inputs.iter().find(|(_, t)| t.header() != first.header()) {
        return Err(Error::Invalid(format!(
            "{} and {} have different schemas",
            first_path.display(),
            p.display()
        )));
    }
    if matches!(first, Table::Curve(_)) {
        let rows: Vec<(PathBuf, Vec<CurveRow>)> = inputs
            .into_iter()
            .map(|(p, t)| match t {
                Table::Curve(r) => (p, r),
                Table::Decompose(_) => unreachable!(),
            })
            .collect();
        let merged = merge_rows(&rows, |r| {
            (
                r.experiment.clone(),
                r.model_pair.clone(),
                r.gallery_size,
                r.k,
            )
        })?;
        Ok(Table::Curve(merged))
    } else {
        let rows: Vec<(PathBuf, Vec<DecomposeRow>)> = inputs
            .into_iter()
            .map(|(p, t)| match t {
                Table::Decompose(r) => (p, r),
                Table::Curve(_) => unreachable!(),
            })
            .collect();
        let merged = merge_rows(&rows, |r| {
            (r.experiment.clone(), r.model_pair.clone(), r.ipc, r.k)
        })?;
        Ok(Table::Decompose(merged))
    }
}
