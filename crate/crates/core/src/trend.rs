//! Linear alignment-vs-performance trend fitted on one model population and
//! evaluated on another.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Population {
    Base,
    New,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelPoint {
    pub model_id: String,
    pub population: Population,
    pub performance: f64,
    pub alignment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearFit {
    pub fn predict(&self, performance: f64) -> f64 {
        self.slope * performance + self.intercept
    }
}

fn check_finite(points: &[ModelPoint]) -> Result<()> {
    if points
        .iter()
        .any(|p| !p.performance.is_finite() || !p.alignment.is_finite())
    {
        return Err(Error::Degenerate("non-finite performance or alignment"));
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    xs.sum::<f64>() / n
}

/// Ordinary least squares of alignment on performance. Returns the line and
/// its in-sample R², the squared Pearson correlation.
pub fn fit_trend(base: &[ModelPoint]) -> Result<(LinearFit, f64)> {
    if base.len() < 2 {
        return Err(Error::EmptyInput("trend fit needs at least two points"));
    }
    check_finite(base)?;
    let mx = mean(base.iter().map(|p| p.performance));
    let my = mean(base.iter().map(|p| p.alignment));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in base {
        let (dx, dy) = (p.performance - mx, p.alignment - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("constant performance"));
    }
    if syy == 0.0 {
        return Err(Error::Degenerate("constant alignment"));
    }
    let slope = sxy / sxx;
    let fit = LinearFit {
        slope,
        intercept: my - slope * mx,
    };
    let r2 = (sxy * sxy / (sxx * syy)).min(1.0);
    Ok((fit, r2))
}

/// `1 - sum (a - a_hat)^2 / sum (a - mean_new)^2`. Negative when the line
/// predicts worse than the population's own mean.
pub fn generalized_r2(fit: &LinearFit, new: &[ModelPoint]) -> Result<f64> {
    if new.len() < 2 {
        return Err(Error::EmptyInput(
            "generalized R² needs at least two points",
        ));
    }
    check_finite(new)?;
    let m = mean(new.iter().map(|p| p.alignment));
    let ss_res: f64 = new
        .iter()
        .map(|p| {
            let r = p.alignment - fit.predict(p.performance);
            r * r
        })
        .sum();
    let ss_tot: f64 = new
        .iter()
        .map(|p| (p.alignment - m) * (p.alignment - m))
        .sum();
    if ss_tot == 0.0 {
        return Err(Error::Degenerate(
            "constant alignment in evaluation population",
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrendReport {
    pub slope: f64,
    pub intercept: f64,
    pub r2_base: f64,
    pub r2_new: f64,
    pub n_base: usize,
    pub n_new: usize,
}

pub fn trend_report(points: &[ModelPoint]) -> Result<TrendReport> {
    let base: Vec<ModelPoint> = points
        .iter()
        .filter(|p| p.population == Population::Base)
        .cloned()
        .collect();
    let new: Vec<ModelPoint> = points
        .iter()
        .filter(|p| p.population == Population::New)
        .cloned()
        .collect();
    let (fit, r2_base) = fit_trend(&base)?;
    let r2_new = generalized_r2(&fit, &new)?;
    Ok(TrendReport {
        slope: fit.slope,
        intercept: fit.intercept,
        r2_base,
        r2_new,
        n_base: base.len(),
        n_new: new.len(),
    })
}

/// One row of the scores table.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreRow {
    pub model_id: String,
    pub population: Population,
    pub benchmark: String,
    pub vision_variant: String,
    pub performance: f64,
    pub alignment: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrendCell {
    pub benchmark: String,
    pub vision_variant: String,
    pub report: TrendReport,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BenchmarkAverage {
    pub benchmark: String,
    pub r2_avg_base: f64,
    pub r2_avg_new: f64,
    pub variants: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrendTable {
    pub cells: Vec<TrendCell>,
    pub averages: Vec<BenchmarkAverage>,
}

/// A failure in one `(benchmark, variant)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellError {
    pub benchmark: String,
    pub vision_variant: String,
    pub error: Error,
}

/// Fits every `(benchmark, vision_variant)` cell and averages R² over the
/// variants of each benchmark, unweighted. Cells and benchmarks appear in
/// order of first occurrence. All failing cells are reported together.
pub fn trend_table(rows: &[ScoreRow]) -> core::result::Result<TrendTable, Vec<CellError>> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.benchmark.as_str(), r.vision_variant.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut cells = Vec::new();
    let mut errors = Vec::new();
    for (bench, variant) in keys {
        let points: Vec<ModelPoint> = rows
            .iter()
            .filter(|r| r.benchmark == bench && r.vision_variant == variant)
            .map(|r| ModelPoint {
                model_id: r.model_id.clone(),
                population: r.population,
                performance: r.performance,
                alignment: r.alignment,
            })
            .collect();
        match trend_report(&points) {
            Ok(report) => cells.push(TrendCell {
                benchmark: bench.into(),
                vision_variant: variant.into(),
                report,
            }),
            Err(error) => errors.push(CellError {
                benchmark: bench.into(),
                vision_variant: variant.into(),
                error,
            }),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let mut averages: Vec<BenchmarkAverage> = Vec::new();
    for cell in &cells {
        match averages.iter_mut().find(|a| a.benchmark == cell.benchmark) {
            Some(a) => {
                a.r2_avg_base += cell.report.r2_base;
                a.r2_avg_new += cell.report.r2_new;
                a.variants += 1;
            }
            None => averages.push(BenchmarkAverage {
                benchmark: cell.benchmark.clone(),
                r2_avg_base: cell.report.r2_base,
                r2_avg_new: cell.report.r2_new,
                variants: 1,
            }),
        }
    }
    for a in &mut averages {
        a.r2_avg_base /= a.variants as f64;
        a.r2_avg_new /= a.variants as f64;
    }
    Ok(TrendTable { cells, averages })
}
