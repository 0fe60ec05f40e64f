//! Subcommands. Each one resolves its configuration, runs, writes its
//! outputs into the output directory and returns their paths.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mknn_core::dedup::{self, GroupDirection, GroupParams};
use mknn_core::knn::{Exclude, NeighborSearch};
use mknn_core::metrics::{self, AlignmentReport, DecompositionReport, LayerPair, ReportConfig};
use mknn_core::phash::PerceptualHash;
use mknn_core::rng::{self, streams};
use mknn_core::synth::{self, SynthSpec};
use mknn_core::trend::{self, ScoreRow};
use mknn_core::{EmbeddingSet, Error as CoreError, Manifest};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::hashing::{self, Item};
use crate::report::{self, CurveRow, DecomposeRow, Envelope, TrendAverageRow, TrendCellRow};
use crate::search::{self, ParallelSearch};
use crate::{config, emb, jsonl};

#[derive(Debug, Parser)]
#[command(
    name = "mknn",
    version,
    about = "Mutual-kNN representational alignment experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// Seed for every random choice in the run [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving the outputs [default: .]
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// TOML file with global keys and one table per subcommand
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Globals {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for Globals {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mutual kNN between two modalities, with an optional layer-pair sweep
    Align(AlignArgs),
    /// Mutual kNN of a fixed query set against nested growing galleries
    ScaleCurve(ScaleCurveArgs),
    /// Class-level decomposition of alignment over images per class
    Decompose(DecomposeArgs),
    /// Perceptual-hash and caption deduplication of a gallery
    Dedup(DedupArgs),
    /// Alignment-vs-performance trend fits and generalized R²
    Trend(TrendArgs),
    /// Synthetic paired embeddings with known structure
    Synth(SynthArgs),
    /// Merge curve or decomposition CSVs into one table
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Align(_) => "align",
            Command::ScaleCurve(_) => "scale-curve",
            Command::Decompose(_) => "decompose",
            Command::Dedup(_) => "dedup",
            Command::Trend(_) => "trend",
            Command::Synth(_) => "synth",
            Command::Report(_) => "report",
        }
    }
}

const SECTIONS: &[&str] = &[
    "align",
    "scale-curve",
    "decompose",
    "dedup",
    "trend",
    "synth",
    "report",
];

#[derive(Debug, Args, Serialize)]
pub struct AlignArgs {
    /// Embedding files of modality A, one per layer
    #[arg(long, value_delimiter = ',')]
    pub features_a: Option<Vec<PathBuf>>,
    /// Embedding files of modality B, one per layer
    #[arg(long, value_delimiter = ',')]
    pub features_b: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub manifest_a: Option<PathBuf>,
    #[arg(long)]
    pub manifest_b: Option<PathBuf>,
    /// Neighborhood sizes, strictly ascending [default: 10]
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// File of query ids, one per line; the other rows form the gallery.
    /// Without it every row is a query against all others.
    #[arg(long)]
    pub query_ids: Option<PathBuf>,
    /// Rows sampled for the layer-pair sweep [default: 1024]
    #[arg(long)]
    pub probe_size: Option<usize>,
    /// k used by the layer-pair sweep [default: 10]
    #[arg(long)]
    pub probe_k: Option<usize>,
    /// Also report the group-level score using manifest group ids
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub grouped: Option<bool>,
    /// Keep per-query scores in the JSON report
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub per_sample: Option<bool>,
    /// Write neighbor lists as JSON Lines
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump_neighbors: Option<bool>,
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub model_pair: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub features_a: Vec<PathBuf>,
    pub features_b: Vec<PathBuf>,
    pub manifest_a: Option<PathBuf>,
    pub manifest_b: Option<PathBuf>,
    pub k: Vec<usize>,
    pub query_ids: Option<PathBuf>,
    pub probe_size: usize,
    pub probe_k: usize,
    pub grouped: bool,
    pub per_sample: bool,
    pub dump_neighbors: bool,
    pub experiment: String,
    pub model_pair: Option<String>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            features_a: Vec::new(),
            features_b: Vec::new(),
            manifest_a: None,
            manifest_b: None,
            k: vec![10],
            query_ids: None,
            probe_size: 1024,
            probe_k: 10,
            grouped: false,
            per_sample: false,
            dump_neighbors: false,
            experiment: "align".into(),
            model_pair: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ScaleCurveArgs {
    #[arg(long)]
    pub features_a: Option<PathBuf>,
    #[arg(long)]
    pub features_b: Option<PathBuf>,
    #[arg(long)]
    pub manifest_a: Option<PathBuf>,
    #[arg(long)]
    pub manifest_b: Option<PathBuf>,
    /// Gallery sizes, strictly ascending
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Neighborhood sizes [default: 1,10]
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Neighborhood sizes as fractions of each gallery size, rounded and at
    /// least 1; replaces `k` when given
    #[arg(long, value_delimiter = ',')]
    pub k_fractions: Option<Vec<f64>>,
    /// File of query ids, one per line
    #[arg(long)]
    pub query_ids: Option<PathBuf>,
    /// Without a query id file, the first this many rows are the queries
    /// [default: 1024]
    #[arg(long)]
    pub query_count: Option<usize>,
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub model_pair: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleCurveConfig {
    pub features_a: Option<PathBuf>,
    pub features_b: Option<PathBuf>,
    pub manifest_a: Option<PathBuf>,
    pub manifest_b: Option<PathBuf>,
    pub sizes: Vec<usize>,
    pub k: Vec<usize>,
    pub k_fractions: Vec<f64>,
    pub query_ids: Option<PathBuf>,
    pub query_count: usize,
    pub experiment: String,
    pub model_pair: Option<String>,
}

impl Default for ScaleCurveConfig {
    fn default() -> Self {
        Self {
            features_a: None,
            features_b: None,
            manifest_a: None,
            manifest_b: None,
            sizes: Vec::new(),
            k: vec![1, 10],
            k_fractions: Vec::new(),
            query_ids: None,
            query_count: 1024,
            experiment: "scale-curve".into(),
            model_pair: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub features_a: Option<PathBuf>,
    #[arg(long)]
    pub features_b: Option<PathBuf>,
    /// Manifest of modality A; its class labels drive the split
    #[arg(long)]
    pub manifest_a: Option<PathBuf>,
    #[arg(long)]
    pub manifest_b: Option<PathBuf>,
    /// Gallery items per class [default: 1]
    #[arg(long, value_delimiter = ',')]
    pub ipc: Option<Vec<usize>>,
    /// Neighborhood sizes [default: 1,10]
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub model_pair: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    pub features_a: Option<PathBuf>,
    pub features_b: Option<PathBuf>,
    pub manifest_a: Option<PathBuf>,
    pub manifest_b: Option<PathBuf>,
    pub ipc: Vec<usize>,
    pub k: Vec<usize>,
    pub experiment: String,
    pub model_pair: Option<String>,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            features_a: None,
            features_b: None,
            manifest_a: None,
            manifest_b: None,
            ipc: vec![1],
            k: vec![1, 10],
            experiment: "decompose".into(),
            model_pair: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupsArg {
    /// One caption, many images
    T2i,
    /// One image, many captions
    I2t,
}

#[derive(Debug, Args, Serialize)]
pub struct DedupArgs {
    /// Gallery items as JSON Lines {id, image, caption}
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// Query items in the same format
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Precomputed hashes as JSON Lines {id, phash_hex}
    #[arg(long)]
    pub hash_cache: Option<PathBuf>,
    /// Write every computed hash to hash_cache.jsonl
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub write_hash_cache: Option<bool>,
    /// Hamming distance at or below which images are duplicates [default: 2]
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Also build a one-to-many group dataset from the gallery
    #[arg(long, value_enum)]
    pub groups: Option<GroupsArg>,
    /// [default: 5]
    #[arg(long)]
    pub min_multiplicity: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    pub per_group_take: Option<usize>,
    #[arg(long)]
    pub max_groups: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub gallery: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub hash_cache: Option<PathBuf>,
    pub write_hash_cache: bool,
    pub threshold: u32,
    pub groups: Option<GroupsArg>,
    pub min_multiplicity: usize,
    pub per_group_take: usize,
    pub max_groups: Option<usize>,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            gallery: None,
            queries: None,
            hash_cache: None,
            write_hash_cache: false,
            threshold: dedup::DEFAULT_THRESHOLD,
            groups: None,
            min_multiplicity: 5,
            per_group_take: 5,
            max_groups: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrendArgs {
    /// CSV with model_id,population,benchmark,vision_variant,performance,alignment
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendConfig {
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_sources: Option<usize>,
    #[arg(long)]
    pub dim_a: Option<usize>,
    #[arg(long)]
    pub dim_b: Option<usize>,
    #[arg(long)]
    pub shared_dim: Option<usize>,
    #[arg(long)]
    pub noise_a: Option<f64>,
    #[arg(long)]
    pub noise_b: Option<f64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub group_multiplicity_a: Option<usize>,
    #[arg(long)]
    pub group_multiplicity_b: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sources: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub shared_dim: usize,
    pub noise_a: f64,
    pub noise_b: f64,
    pub classes: Option<usize>,
    pub group_multiplicity_a: usize,
    pub group_multiplicity_b: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            n_sources: s.n_sources,
            dim_a: s.dim_a,
            dim_b: s.dim_b,
            shared_dim: s.shared_dim,
            noise_a: s.noise_a,
            noise_b: s.noise_b,
            classes: s.classes,
            group_multiplicity_a: s.group_multiplicity_a,
            group_multiplicity_b: s.group_multiplicity_b,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Curve or decomposition CSVs, all with the same header
    #[arg(long, value_delimiter = ',')]
    pub inputs: Option<Vec<PathBuf>>,
    /// Base name of the merged outputs [default: report]
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfigArgs {
    pub inputs: Vec<PathBuf>,
    pub name: String,
}

impl Default for ReportConfigArgs {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            name: "report".into(),
        }
    }
}

/// The configuration echoed into reports: the seed and the resolved command
/// settings. Thread count and output directory are left out because they
/// do not change results.
#[derive(Debug, Serialize)]
struct Echo<'a, C: Serialize> {
    seed: u64,
    #[serde(flatten)]
    command: &'a C,
}

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn out(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.written.push(p.clone());
        p
    }
}

fn to_value(v: &impl Serialize) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

/// Parses arguments from the process and runs.
pub fn main_args() -> Result<Vec<PathBuf>> {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let file = match &cli.global.config {
        Some(p) => Some(config::load_file(p, SECTIONS)?),
        None => None,
    };
    let mut layers = Vec::new();
    if let Some(f) = &file {
        layers.push(config::globals_of(f));
    }
    layers.push(to_value(&cli.global)?);
    let globals: Globals = config::resolve(&Globals::default(), &layers)?;
    let section = file
        .as_ref()
        .and_then(|f| f.get(cli.command.name()).cloned())
        .unwrap_or(Value::Null);
    if !section.is_null() && !section.is_object() {
        bail!("config section [{}] must be a table", cli.command.name());
    }

    std::fs::create_dir_all(&globals.out_dir)
        .with_context(|| format!("creating {}", globals.out_dir.display()))?;
    let mut ctx = Ctx {
        seed: globals.seed,
        out_dir: globals.out_dir.clone(),
        written: Vec::new(),
    };
    search::with_threads(globals.threads, || -> Result<()> {
        macro_rules! resolved {
            ($ty:ty, $args:expr) => {
                config::resolve(&<$ty>::default(), &[section.clone(), to_value($args)?])?
            };
        }
        match &cli.command {
            Command::Align(a) => align(&mut ctx, resolved!(AlignConfig, a)),
            Command::ScaleCurve(a) => scale_curve(&mut ctx, resolved!(ScaleCurveConfig, a)),
            Command::Decompose(a) => decompose(&mut ctx, resolved!(DecomposeConfig, a)),
            Command::Dedup(a) => dedup_cmd(&mut ctx, resolved!(DedupConfig, a)),
            Command::Trend(a) => trend_cmd(&mut ctx, resolved!(TrendConfig, a)),
            Command::Synth(a) => synth_cmd(&mut ctx, resolved!(SynthConfig, a)),
            Command::Report(a) => report_cmd(&mut ctx, resolved!(ReportConfigArgs, a)),
        }
    })??;
    Ok(ctx.written)
}

fn required<'a, T>(value: &'a Option<T>, command: &str, key: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| anyhow!("{command}: missing required setting `{key}`"))
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(
        || p.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn check_ascending(values: &[usize], what: &str) -> Result<()> {
    if values.is_empty() {
        bail!("{what} list is empty");
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        bail!("{what} values must be strictly ascending, got {values:?}");
    }
    Ok(())
}

/// Embedding layers of one modality bound to their manifest.
struct Side {
    layers: Vec<EmbeddingSet>,
    files: Vec<PathBuf>,
    manifest: Manifest,
    manifest_path: PathBuf,
}

fn load_side(files: &[PathBuf], manifest_path: &Path) -> Result<Side> {
    let manifest = jsonl::read_manifest(manifest_path)?;
    let mut layers = Vec::with_capacity(files.len());
    for f in files {
        let e = emb::read_normalized(f, None)?;
        if e.count() != manifest.len() {
            bail!(
                "{} has {} rows but manifest {} has {}",
                f.display(),
                e.count(),
                manifest_path.display(),
                manifest.len()
            );
        }
        layers.push(e);
    }
    Ok(Side {
        layers,
        files: files.to_vec(),
        manifest,
        manifest_path: manifest_path.to_path_buf(),
    })
}

fn load_pair(
    command: &str,
    fa: &[PathBuf],
    fb: &[PathBuf],
    ma: &Option<PathBuf>,
    mb: &Option<PathBuf>,
) -> Result<(Side, Side)> {
    if fa.is_empty() || fb.is_empty() {
        bail!("{command}: both features_a and features_b are required");
    }
    let a = load_side(fa, required(ma, command, "manifest_a")?)?;
    let b = load_side(fb, required(mb, command, "manifest_b")?)?;
    if a.manifest.len() != b.manifest.len() {
        bail!(
            "manifest {} has {} rows but manifest {} has {}",
            a.manifest_path.display(),
            a.manifest.len(),
            b.manifest_path.display(),
            b.manifest.len()
        );
    }
    a.manifest.check_paired(&b.manifest).with_context(|| {
        format!(
            "manifests {} and {} are not paired",
            a.manifest_path.display(),
            b.manifest_path.display()
        )
    })?;
    Ok((a, b))
}

/// Row positions of the ids listed in `path`, one per line.
fn read_query_ids(path: &Path, manifest: &Manifest) -> Result<Vec<usize>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        let pos = manifest.position(id).ok_or_else(|| {
            anyhow!(
                "{}:{}: id {id:?} is not in the manifest",
                path.display(),
                n + 1
            )
        })?;
        if !seen.insert(pos) {
            bail!("{}:{}: id {id:?} listed twice", path.display(), n + 1);
        }
        out.push(pos);
    }
    if out.is_empty() {
        bail!("{}: no query ids", path.display());
    }
    Ok(out)
}

fn complement(n: usize, queries: &[usize]) -> Vec<usize> {
    let mut is_query = vec![false; n];
    for &q in queries {
        is_query[q] = true;
    }
    (0..n).filter(|&i| !is_query[i]).collect()
}

/// Group ordinal of every row, from manifest A; manifest B may omit group
/// ids but must agree where it has them.
fn row_groups(a: &Side, b: &Side) -> Result<Vec<u32>> {
    let idx = a
        .manifest
        .group_index()
        .with_context(|| format!("{} lacks group ids", a.manifest_path.display()))?;
    for (i, (ra, rb)) in a.manifest.rows().iter().zip(b.manifest.rows()).enumerate() {
        if rb.group_id.is_some() && rb.group_id != ra.group_id {
            bail!(
                "row {i}: group id {:?} in {} differs from {:?} in {}",
                ra.group_id,
                a.manifest_path.display(),
                rb.group_id,
                b.manifest_path.display()
            );
        }
    }
    Ok(idx.ids)
}

#[derive(Debug, Serialize)]
struct AlignResult {
    model_pair: String,
    layer_a: u32,
    layer_b: u32,
    query_count: usize,
    gallery_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    layer_sweep: Option<LayerPair>,
    reports: Vec<AlignmentReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    grouped: Vec<AlignmentReport>,
}

fn align(ctx: &mut Ctx, cfg: AlignConfig) -> Result<()> {
    let (a, b) = load_pair(
        "align",
        &cfg.features_a,
        &cfg.features_b,
        &cfg.manifest_a,
        &cfg.manifest_b,
    )?;
    check_ascending(&cfg.k, "k")?;
    let search = ParallelSearch::default();
    let n = a.manifest.len();

    let (ia, ib, layer_sweep) = if a.layers.len() > 1 || b.layers.len() > 1 {
        let mut probe: Vec<usize> = (0..n).collect();
        probe.shuffle(&mut rng::stream(ctx.seed, streams::PROBE));
        probe.truncate(cfg.probe_size.min(n));
        probe.sort_unstable();
        let lp = metrics::best_layer_pair(&a.layers, &b.layers, &probe, cfg.probe_k, &search)
            .context("layer-pair sweep")?;
        (lp.index_a, lp.index_b, Some(lp))
    } else {
        (0, 0, None)
    };
    let (fa, fb) = (&a.layers[ia], &b.layers[ib]);
    let model_pair = cfg
        .model_pair
        .clone()
        .unwrap_or_else(|| format!("{}~{}", stem(&a.files[ia]), stem(&b.files[ib])));

    let (queries, gallery) = match &cfg.query_ids {
        Some(p) => {
            let q = read_query_ids(p, &a.manifest)?;
            let g = complement(n, &q);
            (Some(q), g)
        }
        None => (None, (0..n).collect()),
    };
    let kmax = *cfg.k.last().unwrap();
    let (na, nb) = match &queries {
        None => (
            search.topk(fa, fa, kmax, Exclude::Identity)?,
            search.topk(fb, fb, kmax, Exclude::Identity)?,
        ),
        Some(q) => {
            let (ga, gb) = (fa.select(&gallery)?, fb.select(&gallery)?);
            (
                search.topk(&fa.select(q)?, &ga, kmax, Exclude::Nothing)?,
                search.topk(&fb.select(q)?, &gb, kmax, Exclude::Nothing)?,
            )
        }
    };
    let groups = if cfg.grouped {
        let all = row_groups(&a, &b)?;
        Some(gallery.iter().map(|&i| all[i]).collect::<Vec<u32>>())
    } else {
        None
    };
    let report_config = ReportConfig {
        query_set: Some(
            cfg.query_ids
                .as_ref()
                .map_or_else(|| "all-rows".to_string(), |p| p.display().to_string()),
        ),
        seed: Some(ctx.seed),
        layer_pair: Some((fa.layer(), fb.layer())),
    };

    let mut reports = Vec::new();
    let mut grouped = Vec::new();
    let mut rows = Vec::new();
    for &k in &cfg.k {
        let (ta, tb) = (na.truncate(k)?, nb.truncate(k)?);
        let mut r = metrics::mutual_knn(&ta, &tb)?;
        r.config = report_config.clone();
        rows.push(curve_row(
            &cfg.experiment,
            &model_pair,
            r.gallery_size,
            k,
            &r,
        ));
        if let Some(g) = &groups {
            let mut gr = metrics::grouped_mutual_knn(&ta, &tb, g)?;
            gr.config = report_config.clone();
            rows.push(curve_row(
                &format!("{}-grouped", cfg.experiment),
                &model_pair,
                gr.gallery_size,
                k,
                &gr,
            ));
            grouped.push(gr);
        }
        reports.push(r);
    }
    if !cfg.per_sample {
        for r in reports.iter_mut().chain(grouped.iter_mut()) {
            r.per_sample.clear();
        }
    }

    if cfg.dump_neighbors {
        let ids = |m: &Manifest, rows: &[usize]| -> Vec<String> {
            rows.iter().map(|&i| m.rows()[i].id.clone()).collect()
        };
        let q_rows = queries.clone().unwrap_or_else(|| gallery.clone());
        for (side, list, name) in [
            (&a, &na, "neighbors_a.jsonl"),
            (&b, &nb, "neighbors_b.jsonl"),
        ] {
            let q = ids(&side.manifest, &q_rows);
            let g = ids(&side.manifest, &gallery);
            let qr: Vec<&str> = q.iter().map(String::as_str).collect();
            let gr: Vec<&str> = g.iter().map(String::as_str).collect();
            jsonl::write_neighbors(&ctx.out(name), list, &qr, &gr)?;
        }
    }

    let result = AlignResult {
        model_pair,
        layer_a: fa.layer(),
        layer_b: fb.layer(),
        query_count: na.query_count(),
        gallery_size: gallery.len(),
        layer_sweep,
        reports,
        grouped,
    };
    let echo = Echo {
        seed: ctx.seed,
        command: &cfg,
    };
    report::write_csv(&ctx.out("align.csv"), report::CURVE_HEADER, &rows)?;
    report::write_json(
        &ctx.out("align.json"),
        &Envelope::new("align", &echo, &result),
    )?;
    Ok(())
}

fn curve_row(
    experiment: &str,
    model_pair: &str,
    gallery_size: usize,
    k: usize,
    r: &AlignmentReport,
) -> CurveRow {
    CurveRow {
        experiment: experiment.to_string(),
        model_pair: model_pair.to_string(),
        gallery_size,
        k,
        mean_score: r.mean_score,
        chance_level: r.chance_level,
    }
}

#[derive(Debug, Serialize)]
struct CurveResult {
    model_pair: String,
    query_count: usize,
    pool_size: usize,
    curve: Vec<metrics::CurvePoint>,
}

fn scale_curve(ctx: &mut Ctx, cfg: ScaleCurveConfig) -> Result<()> {
    let fa = [required(&cfg.features_a, "scale-curve", "features_a")?.clone()];
    let fb = [required(&cfg.features_b, "scale-curve", "features_b")?.clone()];
    let (a, b) = load_pair("scale-curve", &fa, &fb, &cfg.manifest_a, &cfg.manifest_b)?;
    check_ascending(&cfg.sizes, "sizes")?;
    check_ascending(&cfg.k, "k")?;
    let n = a.manifest.len();
    let queries = match &cfg.query_ids {
        Some(p) => read_query_ids(p, &a.manifest)?,
        None => {
            if cfg.query_count == 0 || cfg.query_count >= n {
                bail!("query_count {} must be in 1..{n}", cfg.query_count);
            }
            (0..cfg.query_count).collect()
        }
    };
    let selection =
        mknn_core::nested_subsample(n, &cfg.sizes, &queries, ctx.seed).with_context(|| {
            format!(
                "drawing galleries from {} rows with {} queries",
                n,
                queries.len()
            )
        })?;
    if let Some(f) = cfg.k_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        bail!("k fraction {f} must be in (0, 1]");
    }
    let ks_for = |size: usize| -> Vec<usize> {
        if cfg.k_fractions.is_empty() {
            return cfg.k.clone();
        }
        let mut ks: Vec<usize> = cfg
            .k_fractions
            .iter()
            .map(|f| ((f * size as f64).round() as usize).max(1))
            .collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    };
    let curve = metrics::scale_curve_by(
        &a.layers[0],
        &b.layers[0],
        &queries,
        &selection,
        ks_for,
        &ParallelSearch::default(),
    )?;
    let model_pair = cfg
        .model_pair
        .clone()
        .unwrap_or_else(|| format!("{}~{}", stem(&fa[0]), stem(&fb[0])));
    let rows: Vec<CurveRow> = curve
        .iter()
        .map(|p| CurveRow {
            experiment: cfg.experiment.clone(),
            model_pair: model_pair.clone(),
            gallery_size: p.gallery_size,
            k: p.k,
            mean_score: p.mean_score,
            chance_level: p.chance_level,
        })
        .collect();
    let result = CurveResult {
        model_pair,
        query_count: queries.len(),
        pool_size: n,
        curve,
    };
    let echo = Echo {
        seed: ctx.seed,
        command: &cfg,
    };
    report::write_csv(&ctx.out("scale_curve.csv"), report::CURVE_HEADER, &rows)?;
    report::write_json(
        &ctx.out("scale_curve.json"),
        &Envelope::new("scale-curve", &echo, &result),
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DecomposeResult {
    model_pair: String,
    classes: usize,
    reports: Vec<DecompositionReport>,
}

fn decompose(ctx: &mut Ctx, cfg: DecomposeConfig) -> Result<()> {
    let fa = [required(&cfg.features_a, "decompose", "features_a")?.clone()];
    let fb = [required(&cfg.features_b, "decompose", "features_b")?.clone()];
    let (a, b) = load_pair("decompose", &fa, &fb, &cfg.manifest_a, &cfg.manifest_b)?;
    check_ascending(&cfg.ipc, "ipc")?;
    check_ascending(&cfg.k, "k")?;
    let classes = a
        .manifest
        .class_index()
        .with_context(|| format!("{} lacks class labels", a.manifest_path.display()))?;
    for (i, (ra, rb)) in a.manifest.rows().iter().zip(b.manifest.rows()).enumerate() {
        if rb.class_label.is_some() && rb.class_label != ra.class_label {
            bail!(
                "row {i}: class label {:?} in {} differs from {:?} in {}",
                ra.class_label,
                a.manifest_path.display(),
                rb.class_label,
                b.manifest_path.display()
            );
        }
    }
    let search = ParallelSearch::default();
    let mut reports = Vec::new();
    for &ipc in &cfg.ipc {
        let out = metrics::decompose(
            &a.layers[0],
            &b.layers[0],
            &classes.ids,
            ipc,
            &cfg.k,
            ctx.seed,
            &search,
        );
        match out {
            Ok(r) => reports.extend(r),
            Err(CoreError::ClassesTooSmall {
                required,
                classes: short,
            }) => {
                let lines: Vec<String> = short
                    .iter()
                    .map(|&(c, have)| {
                        format!(
                            "  class {:?}: {have} available, {required} needed",
                            classes.names[c as usize]
                        )
                    })
                    .collect();
                bail!(
                    "ipc {ipc}: {} classes are too small (one row per class is held out as its query)\n{}",
                    short.len(),
                    lines.join("\n")
                );
            }
            Err(e) => return Err(anyhow::Error::from(e).context(format!("ipc {ipc}"))),
        }
    }
    let model_pair = cfg
        .model_pair
        .clone()
        .unwrap_or_else(|| format!("{}~{}", stem(&fa[0]), stem(&fb[0])));
    let rows: Vec<DecomposeRow> = reports
        .iter()
        .map(|r| DecomposeRow {
            experiment: cfg.experiment.clone(),
            model_pair: model_pair.clone(),
            ipc: r.ipc,
            k: r.k,
            acc_a: r.acc_a,
            acc_b: r.acc_b,
            joint_correct: r.joint_correct,
            strict_agreement: r.strict_agreement,
        })
        .collect();
    let result = DecomposeResult {
        model_pair,
        classes: classes.names.len(),
        reports,
    };
    let echo = Echo {
        seed: ctx.seed,
        command: &cfg,
    };
    report::write_csv(&ctx.out("decompose.csv"), report::DECOMPOSE_HEADER, &rows)?;
    report::write_json(
        &ctx.out("decompose.json"),
        &Envelope::new("decompose", &echo, &result),
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct Undecodable {
    set: &'static str,
    index: usize,
    id: String,
    reason: String,
}

#[derive(Debug, Serialize)]
struct GroupOut {
    key: String,
    members: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct GroupsResult {
    direction: GroupDirection,
    min_multiplicity: usize,
    per_group_take: usize,
    stats: dedup::GroupStats,
    groups: Vec<GroupOut>,
}

#[derive(Debug, Serialize)]
struct DedupOut {
    gallery_size: usize,
    query_count: usize,
    stats: dedup::DedupStats,
    kept: Vec<usize>,
    removed_vs_queries: Vec<usize>,
    removed_within: Vec<usize>,
    image_clusters: Vec<Vec<usize>>,
    caption_clusters: Vec<Vec<usize>>,
    undecodable: Vec<Undecodable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<GroupsResult>,
}

#[derive(Debug, Serialize)]
struct GroupRow<'a> {
    id: &'a str,
    group_id: String,
}

/// Hashes for `items`, from the cache when present, otherwise decoded.
fn item_hashes(
    items: &[Item],
    base: &Path,
    cache: &HashMap<String, PerceptualHash>,
    set: &'static str,
    undecodable: &mut Vec<Undecodable>,
) -> Vec<Option<PerceptualHash>> {
    let mut out: Vec<Option<PerceptualHash>> =
        items.iter().map(|it| cache.get(&it.id).copied()).collect();
    let todo: Vec<(usize, PathBuf)> = items
        .iter()
        .enumerate()
        .filter(|(i, _)| out[*i].is_none())
        .filter_map(|(i, it)| it.image.as_ref().map(|p| (i, base.join(p))))
        .collect();
    let paths: Vec<PathBuf> = todo.iter().map(|(_, p)| p.clone()).collect();
    for ((i, _), h) in todo.iter().zip(hashing::hash_files(&paths)) {
        match h {
            Ok(h) => out[*i] = Some(h),
            Err(reason) => undecodable.push(Undecodable {
                set,
                index: *i,
                id: items[*i].id.clone(),
                reason,
            }),
        }
    }
    for (i, it) in items.iter().enumerate() {
        if out[i].is_none() && it.image.is_none() {
            undecodable.push(Undecodable {
                set,
                index: i,
                id: it.id.clone(),
                reason: "no image path and no cached hash".into(),
            });
        }
    }
    out
}

fn dedup_cmd(ctx: &mut Ctx, cfg: DedupConfig) -> Result<()> {
    let gallery_path = required(&cfg.gallery, "dedup", "gallery")?;
    let gallery: Vec<Item> = jsonl::read(gallery_path)?;
    let queries: Vec<Item> = match &cfg.queries {
        Some(p) => jsonl::read(p)?,
        None => Vec::new(),
    };
    let mut cache = HashMap::new();
    if let Some(p) = &cfg.hash_cache {
        for (id, h) in jsonl::read_hash_cache(p)? {
            if let Some(old) = cache.insert(id.clone(), h) {
                if old != h {
                    bail!("{}: id {id:?} has two different hashes", p.display());
                }
            }
        }
    }
    let base = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut undecodable = Vec::new();
    let gh = item_hashes(
        &gallery,
        &base(gallery_path),
        &cache,
        "gallery",
        &mut undecodable,
    );
    let qh = match &cfg.queries {
        Some(p) => item_hashes(&queries, &base(p), &cache, "queries", &mut undecodable),
        None => Vec::new(),
    };
    undecodable.sort_by(|x, y| (x.set, x.index).cmp(&(y.set, y.index)));

    // positions of the usable items in their input files
    let gpos: Vec<usize> = (0..gallery.len()).filter(|&i| gh[i].is_some()).collect();
    let qpos: Vec<usize> = (0..queries.len()).filter(|&i| qh[i].is_some()).collect();
    let g_hashes: Vec<PerceptualHash> = gpos.iter().map(|&i| gh[i].unwrap()).collect();
    let q_hashes: Vec<PerceptualHash> = qpos.iter().map(|&i| qh[i].unwrap()).collect();
    let g_caps: Vec<&str> = gpos.iter().map(|&i| gallery[i].caption.as_str()).collect();
    let q_caps: Vec<&str> = qpos.iter().map(|&i| queries[i].caption.as_str()).collect();

    let res = dedup::dedup_gallery(&g_hashes, &q_hashes, &g_caps, &q_caps, cfg.threshold)?;
    let map = |v: &[usize]| -> Vec<usize> { v.iter().map(|&i| gpos[i]).collect() };
    let map_all = |v: &[Vec<usize>]| -> Vec<Vec<usize>> { v.iter().map(|c| map(c)).collect() };

    let groups = match cfg.groups {
        None => None,
        Some(dir) => {
            let direction = match dir {
                GroupsArg::T2i => GroupDirection::TextToImages,
                GroupsArg::I2t => GroupDirection::ImageToTexts,
            };
            let keys: Vec<String> = g_hashes.iter().map(|h| h.to_hex()).collect();
            let caps: Vec<String> = g_caps.iter().map(|s| s.to_string()).collect();
            let ds = dedup::build_groups(
                &keys,
                &caps,
                direction,
                GroupParams {
                    min_multiplicity: cfg.min_multiplicity,
                    per_group_take: cfg.per_group_take,
                    max_groups: cfg.max_groups,
                    seed: ctx.seed,
                },
            )?;
            let rows: Vec<GroupRow> = ds
                .flat()
                .into_iter()
                .map(|(m, g)| GroupRow {
                    id: &gallery[gpos[m]].id,
                    group_id: format!("group-{g}"),
                })
                .collect();
            jsonl::write(&ctx.out("groups.jsonl"), rows)?;
            Some(GroupsResult {
                direction: ds.direction,
                min_multiplicity: ds.min_multiplicity,
                per_group_take: ds.per_group_take,
                stats: ds.stats,
                groups: ds
                    .groups
                    .iter()
                    .map(|g| GroupOut {
                        key: g.key.clone(),
                        members: map(&g.members),
                    })
                    .collect(),
            })
        }
    };

    let kept = map(&res.kept);
    let out = DedupOut {
        gallery_size: gallery.len(),
        query_count: queries.len(),
        stats: res.stats,
        removed_vs_queries: map(&res.removed_vs_queries),
        removed_within: map(&res.removed_within),
        image_clusters: map_all(&res.image_clusters),
        caption_clusters: map_all(&res.caption_clusters),
        kept: kept.clone(),
        undecodable,
        groups,
    };

    let gallery_base = base(gallery_path);
    let kept_items: Vec<Item> = kept
        .iter()
        .map(|&i| {
            let mut it = gallery[i].clone();
            if let Some(img) = &it.image {
                let p = gallery_base.join(img);
                it.image = Some(std::fs::canonicalize(&p).unwrap_or(p).display().to_string());
            }
            it
        })
        .collect();
    jsonl::write(&ctx.out("kept_items.jsonl"), &kept_items)?;
    let kept_ids: String = kept
        .iter()
        .map(|&i| format!("{}\n", gallery[i].id))
        .collect();
    let kept_path = ctx.out("kept_ids.txt");
    std::fs::write(&kept_path, kept_ids)
        .with_context(|| format!("writing {}", kept_path.display()))?;

    if cfg.write_hash_cache {
        let mut seen = std::collections::HashSet::new();
        let entries: Vec<(&str, PerceptualHash)> = gallery
            .iter()
            .zip(&gh)
            .chain(queries.iter().zip(&qh))
            .filter_map(|(it, h)| h.map(|h| (it.id.as_str(), h)))
            .filter(|(id, _)| seen.insert(*id))
            .collect();
        jsonl::write_hash_cache(&ctx.out("hash_cache.jsonl"), entries)?;
    }
    let echo = Echo {
        seed: ctx.seed,
        command: &cfg,
    };
    report::write_json(&ctx.out("dedup.json"), &Envelope::new("dedup", &echo, &out))?;
    Ok(())
}

fn trend_cmd(ctx: &mut Ctx, cfg: TrendConfig) -> Result<()> {
    let path = required(&cfg.scores, "trend", "scores")?;
    let rows: Vec<ScoreRow> = report::read_csv(path, report::SCORES_HEADER)?;
    let table = trend::trend_table(&rows).map_err(|cells| {
        let lines: Vec<String> = cells
            .iter()
            .map(|c| format!("  {} / {}: {}", c.benchmark, c.vision_variant, c.error))
            .collect();
        anyhow!(
            "{}: {} cells cannot be fitted\n{}",
            path.display(),
            cells.len(),
            lines.join("\n")
        )
    })?;
    let cells: Vec<TrendCellRow> = table
        .cells
        .iter()
        .map(|c| TrendCellRow {
            benchmark: c.benchmark.clone(),
            vision_variant: c.vision_variant.clone(),
            slope: c.report.slope,
            intercept: c.report.intercept,
            r2_base: c.report.r2_base,
            r2_new: c.report.r2_new,
            n_base: c.report.n_base,
            n_new: c.report.n_new,
        })
        .collect();
    let averages: Vec<TrendAverageRow> = table
        .averages
        .iter()
        .map(|a| TrendAverageRow {
            benchmark: a.benchmark.clone(),
            r2_avg_base: a.r2_avg_base,
            r2_avg_new: a.r2_avg_new,
            variants: a.variants,
        })
        .collect();
    let echo = Echo {
        seed: ctx.seed,
        command: &cfg,
    };
    report::write_csv(&ctx.out("trend.csv"), report::TREND_HEADER, &averages)?;
    report::write_csv(
        &ctx.out("trend_cells.csv"),
        report::TREND_CELLS_HEADER,
        &cells,
    )?;
    report::write_json(
        &ctx.out("trend.json"),
        &Envelope::new("trend", &echo, &table),
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SynthResult {
    rows_a: usize,
    rows_b: usize,
    files: Vec<String>,
}

fn synth_cmd(ctx: &mut Ctx, cfg: SynthConfig) -> Result<()> {
    let spec = SynthSpec {
        n_sources: cfg.n_sources,
        dim_a: cfg.dim_a,
        dim_b: cfg.dim_b,
        shared_dim: cfg.shared_dim,
        noise_a: cfg.noise_a,
        noise_b: cfg.noise_b,
        classes: cfg.classes,
        group_multiplicity_a: cfg.group_multiplicity_a,
        group_multiplicity_b: cfg.group_multiplicity_b,
        seed: ctx.seed,
    };
    let out = synth::generate(&spec)?;
    let names = ["a.emb", "b.emb", "manifest_a.jsonl", "manifest_b.jsonl"];
    emb::write_embeddings(&ctx.out(names[0]), &out.a)?;
    emb::write_embeddings(&ctx.out(names[1]), &out.b)?;
    jsonl::write_manifest(&ctx.out(names[2]), &out.manifest_a)?;
    jsonl::write_manifest(&ctx.out(names[3]), &out.manifest_b)?;
    let result = SynthResult {
        rows_a: out.a.count(),
        rows_b: out.b.count(),
        files: names.iter().map(|s| s.to_string()).collect(),
    };
    let echo = Echo {
        seed: ctx.seed,
        command: &cfg,
    };
    report::write_json(
        &ctx.out("synth.json"),
        &Envelope::new("synth", &echo, &result),
    )?;
    Ok(())
}

fn report_cmd(ctx: &mut Ctx, cfg: ReportConfigArgs) -> Result<()> {
    if cfg.inputs.is_empty() {
        bail!("report: missing required setting `inputs`");
    }
    let mut tables = Vec::new();
    for p in &cfg.inputs {
        if !p.exists() {
            bail!("report: input {} does not exist", p.display());
        }
        tables.push((p.clone(), report::read_table(p)?));
    }
    let merged = report::merge(tables)?;
    let echo = Echo {
        seed: ctx.seed,
        command: &cfg,
    };
    merged.write_csv(&ctx.out(&format!("{}.csv", cfg.name)))?;
    report::write_json(
        &ctx.out(&format!("{}.json", cfg.name)),
        &Envelope::new("report", &echo, &merged),
    )?;
    Ok(())
}
