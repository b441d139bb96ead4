//! The `vlg` command line.
//!
//! Exit codes: 0 ok, 1 a data check failed, 2 usage or config error,
//! 3 I/O or malformed input, 4 numeric failure.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::dataset::{
    load_annotations_with, split_of, validate_counts, DatasetError, LoadOptions,
    ReferenceInstance, Split,
};
use crate::evaluation::{
    aggregate_runs, compare_runs, evaluate, read_results_file, render_table, welch_t,
    write_plot_data, write_results_file, CategoryAccuracy, EvalError, ResultRow,
};
use crate::features::synth::{generate_dataset, SynthDatasetSpec, SynthError};
use crate::features::{
    read_archive, write_archive, write_atomic, write_records, ArchiveError, DescriptionFeatures,
    FeatureArchive, Manifest, ObjectFeatures,
};
use crate::model::{load_checkpoint, ModelConfig, ModelError, Variant};
use crate::training::{train_with_progress, TrainConfig, TrainError};
use crate::voxel::{FactorSet, FactorTriplet};

pub const ENV_SEED: &str = "VLG_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::EmptySplit(_) | DatasetError::BatchSize => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss => CliError::Numeric(e.to_string()),
            ModelError::Archive(a) => a.into(),
            ModelError::Checkpoint(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::NonFiniteGradient { .. } | TrainError::NonFiniteParameter { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) | EvalError::Csv(_) | EvalError::Parse(_) => CliError::Io(e.to_string()),
            EvalError::ZeroVariance | EvalError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Archive(a) => a.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// File locations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataConfig {
    pub archive: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Settings merged from defaults, `VLG_SEED`, a config file and flags, in
/// that order of precedence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl CliConfig {
    /// Applies one prefixed setting such as `model.d_model=64`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let (section, name) = key
            .split_once('.')
            .ok_or_else(|| CliError::Usage(format!("key {key:?} lacks a model./train./data. prefix")))?;
        let path = || Some(PathBuf::from(value));
        match section {
            "model" => self.model.set(name, value).map_err(CliError::Usage),
            "train" => self.train.set(name, value).map_err(CliError::Usage),
            "data" => {
                match name {
                    "archive" => self.data.archive = path(),
                    "annotations" => self.data.annotations = path(),
                    "out" => self.data.out = path(),
                    other => return Err(CliError::Usage(format!("unknown key data.{other}"))),
                }
                Ok(())
            }
            other => Err(CliError::Usage(format!("unknown section {other:?} in key {key:?}"))),
        }
    }

    /// Reads flat `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for (k, v) in self.model.to_key_values() {
            out.push((format!("model.{k}"), v));
        }
        for (k, v) in self.train.to_key_values() {
            out.push((format!("train.{k}"), v));
        }
        let show = |p: &Option<PathBuf>| p.as_ref().map_or_else(String::new, |p| p.display().to_string());
        out.push(("data.archive".into(), show(&self.data.archive)));
        out.push(("data.annotations".into(), show(&self.data.annotations)));
        out.push(("data.out".into(), show(&self.data.out)));
        out
    }

    pub fn to_text(&self) -> String {
        self.to_key_values()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Builds the effective configuration. `seed_env` is the value of
/// `VLG_SEED`, if set.
pub fn resolve_config(
    file: Option<&Path>,
    seed_env: Option<&str>,
    flags: &[(String, String)],
) -> Result<CliConfig, CliError> {
    let mut cfg = CliConfig::default();
    if let Some(seed) = seed_env {
        cfg.set("train.seed", seed)
            .map_err(|e| CliError::Usage(format!("{ENV_SEED}: {e}")))?;
    }
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in flags {
        cfg.set(k, v)?;
    }
    log::info!("resolved config:\n{}", cfg.to_text().trim_end());
    Ok(cfg)
}

#[derive(Debug, Parser)]
#[command(name = "vlg", version, about = "Reference-game language grounding over view embeddings and voxel factors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Flat key=value config file (model.*, train.*, data.*).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature archive and annotation file.
    GenSynthetic {
        #[arg(long)]
        objects: usize,
        #[arg(long)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 512)]
        d_view: usize,
        #[arg(long, default_value_t = 512)]
        d_text: usize,
        #[arg(long, default_value_t = 0.1)]
        valid_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        /// Give each split its own object pool.
        #[arg(long)]
        disjoint_objects: bool,
    },
    /// Pack JSONL feature records into an archive.
    Import {
        #[arg(long)]
        objects: PathBuf,
        #[arg(long)]
        descriptions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "imported")]
        provenance: String,
    },
    /// Print archive dims and counts.
    Manifest {
        #[arg(long)]
        archive: PathBuf,
    },
    /// Train one model and keep its best validation checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        /// Output directory for the run record and checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train every variant over several seeds and compare them.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check annotation statistics against the published SNARE counts.
    ValidateData {
        #[arg(long)]
        snare: PathBuf,
        /// CSV mapping object ids to categories.
        #[arg(long)]
        categories: Option<PathBuf>,
    },
    /// Welch's two-tailed t-test of two comma-separated samples.
    Welch {
        #[arg(long, allow_hyphen_values = true)]
        a: String,
        #[arg(long, allow_hyphen_values = true)]
        b: String,
    },
    /// Render a results CSV as a text table.
    Render {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        split: Option<String>,
    },
}

fn parse_flag_pairs(cfg: &ConfigArgs) -> Result<Vec<(String, String)>, CliError> {
    let mut flags = Vec::new();
    if let Some(p) = &cfg.archive {
        flags.push(("data.archive".into(), p.display().to_string()));
    }
    if let Some(p) = &cfg.annotations {
        flags.push(("data.annotations".into(), p.display().to_string()));
    }
    for s in &cfg.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        flags.push((k.to_string(), v.to_string()));
    }
    Ok(flags)
}

const DIM_KEYS: [&str; 2] = ["model.d_v", "model.d_t"];

/// Resolves the configuration and reports whether the embedding widths were
/// given explicitly in the file or flags.
fn resolve(cfg: &ConfigArgs, extra: Vec<(String, String)>) -> Result<(CliConfig, bool), CliError> {
    let mut flags = parse_flag_pairs(cfg)?;
    flags.extend(extra);
    let env = std::env::var(ENV_SEED).ok();
    let config = resolve_config(cfg.config.as_deref(), env.as_deref(), &flags)?;
    let mut pinned = flags.iter().any(|(k, _)| DIM_KEYS.contains(&k.as_str()));
    if let Some(path) = &cfg.config {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        pinned |= text
            .lines()
            .filter_map(|l| l.split_once('='))
            .any(|(k, _)| DIM_KEYS.contains(&k.trim()));
    }
    Ok((config, pinned))
}

/// Takes the embedding widths from the archive unless they were pinned.
fn adopt_dims(model: &mut ModelConfig, archive: &FeatureArchive, pinned: bool) -> Result<(), CliError> {
    if !pinned {
        model.d_view = archive.manifest().d_view;
        model.d_text = archive.manifest().d_text;
    }
    model.validate()?;
    check_dims(model, archive)
}

fn load_data(cfg: &CliConfig) -> Result<(FeatureArchive, Vec<ReferenceInstance>), CliError> {
    let archive = cfg
        .data
        .archive
        .as_ref()
        .ok_or_else(|| CliError::Usage("no archive given (data.archive or --archive)".into()))?;
    let annotations = cfg
        .data
        .annotations
        .as_ref()
        .ok_or_else(|| CliError::Usage("no annotations given (data.annotations or --annotations)".into()))?;
    let archive = read_archive(archive)?;
    let instances = load_annotations_with(annotations, LoadOptions::default())?;
    Ok((archive, instances))
}

fn check_dims(model: &ModelConfig, archive: &FeatureArchive) -> Result<(), CliError> {
    let m = archive.manifest();
    if m.d_view != model.d_view || m.d_text != model.d_text {
        return Err(CliError::Usage(format!(
            "archive has d_v={} d_t={}, model expects d_v={} d_t={}",
            m.d_view, m.d_text, model.d_view, model.d_text
        )));
    }
    Ok(())
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn cmd_gen_synthetic(cmd: &Command, out: &mut String) -> Result<(), CliError> {
    let Command::GenSynthetic {
        objects,
        pairs,
        seed,
        out: dir,
        views,
        d_view,
        d_text,
        valid_fraction,
        test_fraction,
        disjoint_objects,
    } = cmd
    else {
        unreachable!()
    };
    if *objects < 2 || *pairs < 1 {
        return Err(CliError::Usage("need --objects >= 2 and --pairs >= 1".into()));
    }
    let mut spec = SynthDatasetSpec::new(*objects, *pairs, *seed);
    spec.valid_fraction = *valid_fraction;
    spec.test_fraction = *test_fraction;
    spec.disjoint_objects = *disjoint_objects;
    spec.config.views = *views;
    spec.config.d_view = *d_view;
    spec.config.d_text = *d_text;
    let data = generate_dataset(&spec)?;

    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let archive_path = dir.join("features.vlgf");
    let ann_path = dir.join("annotations.jsonl");
    let attr_path = dir.join("attributes.csv");
    let mut ann = String::new();
    for inst in &data.instances {
        ann.push_str(&inst.to_json().to_string());
        ann.push('\n');
    }
    let mut attrs = String::from("object_id,color_id,shape_id,part_count\n");
    for (o, a) in data.archive.objects().iter().zip(&data.attributes) {
        let _ = writeln!(attrs, "{},{},{},{}", o.object_id, a.color_id, a.shape_id, a.part_count);
    }
    let written = write_archive(&data.archive, &archive_path)
        .map_err(CliError::from)
        .and_then(|_| write_atomic(&ann_path, ann.as_bytes()).map_err(|e| io_err(&ann_path, e)))
        .and_then(|_| write_atomic(&attr_path, attrs.as_bytes()).map_err(|e| io_err(&attr_path, e)));
    if let Err(e) = written {
        for p in [&archive_path, &ann_path, &attr_path] {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }

    let count = |f: &dyn Fn(&ReferenceInstance) -> bool| data.instances.iter().filter(|i| f(i)).count();
    let _ = writeln!(out, "objects={}", data.archive.objects().len());
    let _ = writeln!(out, "pairs={}", data.instances.len());
    let _ = writeln!(out, "visual={}", count(&|i| i.category == crate::dataset::Category::Visual));
    let _ = writeln!(out, "blind={}", count(&|i| i.category == crate::dataset::Category::Blind));
    for split in Split::ALL {
        let _ = writeln!(out, "{split}={}", count(&|i| i.split == split));
    }
    let _ = writeln!(out, "archive={}", archive_path.display());
    let _ = writeln!(out, "annotations={}", ann_path.display());
    Ok(())
}

#[derive(Deserialize)]
struct ImportFactor {
    x: Vec<f32>,
    y: Vec<f32>,
    z: Vec<f32>,
}

#[derive(Deserialize)]
struct ImportObject {
    id: String,
    views: Vec<Vec<f32>>,
    factors: Vec<ImportFactor>,
}

#[derive(Deserialize)]
struct ImportDescription {
    id: String,
    #[serde(default)]
    text: Option<String>,
    sentence: Vec<f32>,
    words: Vec<Vec<f32>>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Io(format!("{} line {}: {e}", path.display(), n + 1)))
        })
        .collect()
}

fn cmd_import(objects: &Path, descriptions: &Path, dest: &Path, provenance: &str, out: &mut String) -> Result<(), CliError> {
    let objs: Vec<ImportObject> = read_jsonl(objects)?;
    let descs: Vec<ImportDescription> = read_jsonl(descriptions)?;
    let first_obj = objs
        .first()
        .ok_or_else(|| CliError::Io(format!("{}: no object records", objects.display())))?;
    let first_desc = descs
        .first()
        .ok_or_else(|| CliError::Io(format!("{}: no description records", descriptions.display())))?;
    let manifest = Manifest {
        views: first_obj.views.len(),
        d_view: first_obj.views.first().map_or(0, Vec::len),
        d_text: first_desc.sentence.len(),
        provenance: provenance.to_string(),
    };
    let mut records = Vec::with_capacity(objs.len());
    for o in objs {
        let factors = o
            .factors
            .iter()
            .map(|f| FactorTriplet::from_slices(&f.x, &f.y, &f.z))
            .collect::<Result<Vec<_>, _>>()
            .and_then(FactorSet::new)
            .map_err(|e| CliError::Io(format!("object {}: {e}", o.id)))?;
        records.push(ObjectFeatures {
            object_id: o.id,
            view_embeddings: o.views,
            factors,
        });
    }
    let descs = descs
        .into_iter()
        .map(|d| DescriptionFeatures {
            description_id: d.id,
            sentence_embedding: d.sentence,
            word_embeddings: d.words,
            text: d.text,
        })
        .collect();
    let archive = write_records(manifest, records, descs, dest)?;
    out.push_str(&archive.manifest().dump(archive.objects().len(), archive.descriptions().len()));
    Ok(())
}

fn progress_line(e: &crate::training::EpochRecord) -> String {
    format!(
        "epoch={} steps={} train_loss={:.6} {}",
        e.epoch,
        e.steps,
        e.train_loss,
        e.valid.summary_line()
    )
}

fn cmd_train(
    cfg: &ConfigArgs,
    variant: &Option<String>,
    seed: &Option<String>,
    dir: &Option<PathBuf>,
    out: &mut String,
) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(v) = variant {
        extra.push(("model.variant".to_string(), v.clone()));
    }
    if let Some(s) = seed {
        extra.push(("train.seed".to_string(), s.clone()));
    }
    if let Some(d) = dir {
        extra.push(("data.out".to_string(), d.display().to_string()));
    }
    let (mut config, pinned) = resolve(cfg, extra)?;
    let (archive, instances) = load_data(&config)?;
    adopt_dims(&mut config.model, &archive, pinned)?;
    let out_dir = config.data.out.clone();
    if let Some(d) = &out_dir {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    let outcome = train_with_progress(
        &config.train,
        &config.model,
        &instances,
        &archive,
        out_dir.as_deref(),
        |e| {
            println!("{}", progress_line(e));
        },
    )?;
    let record = outcome.record.to_text();
    if let Some(d) = &out_dir {
        let path = d.join("run_record.txt");
        write_atomic(&path, record.as_bytes()).map_err(|e| io_err(&path, e))?;
        let points: Vec<(f64, f64)> = outcome
            .record
            .epochs
            .iter()
            .map(|e| (e.epoch as f64, e.train_loss))
            .collect();
        let path = d.join("loss_curve.csv");
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_plot_data("epoch", "train_loss", &points, file)?;
    }
    let best = outcome.record.best();
    let _ = writeln!(out, "best_epoch={} {}", best.epoch, best.valid.summary_line());
    Ok(())
}

fn cmd_eval(cfg: &ConfigArgs, checkpoint: &Path, split: &str, out: &mut String) -> Result<(), CliError> {
    let split = parse_split(split)?;
    let (config, _) = resolve(cfg, Vec::new())?;
    if !checkpoint.exists() {
        return Err(CliError::Io(format!("{}: checkpoint not found", checkpoint.display())));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let (archive, instances) = load_data(&config)?;
    check_dims(&ckpt.params.config, &archive)?;
    let subset = split_of(&instances, split);
    if subset.is_empty() {
        return Err(CliError::Usage(format!("split {split} has no instances")));
    }
    let acc = evaluate(&subset, &archive, &ckpt.params)?;
    let _ = writeln!(out, "{}", acc.summary_line());
    Ok(())
}

fn cmd_ablate(
    cfg: &ConfigArgs,
    seeds: u64,
    jobs: usize,
    split: &str,
    dir: &Option<PathBuf>,
    out: &mut String,
) -> Result<(), CliError> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let split = parse_split(split)?;
    let (mut config, pinned) = resolve(cfg, Vec::new())?;
    let (archive, instances) = load_data(&config)?;
    adopt_dims(&mut config.model, &archive, pinned)?;
    let eval_set = split_of(&instances, split);
    if eval_set.is_empty() {
        return Err(CliError::Usage(format!("split {split} has no instances")));
    }
    let base_seed = config.train.seed;
    let tasks: Vec<(Variant, u64)> = Variant::ALL
        .into_iter()
        .flat_map(|v| (0..seeds).map(move |k| (v, base_seed + k)))
        .collect();
    let run = |&(variant, seed): &(Variant, u64)| -> Result<CategoryAccuracy, CliError> {
        let model = ModelConfig {
            variant,
            ..config.model.clone()
        };
        let train = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let run_dir = dir.as_ref().map(|d| d.join(variant.as_str()).join(format!("seed{seed}")));
        if let Some(d) = &run_dir {
            fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
        }
        let outcome = train_with_progress(&train, &model, &instances, &archive, run_dir.as_deref(), |_| {})?;
        if let Some(d) = &run_dir {
            let path = d.join("run_record.txt");
            write_atomic(&path, outcome.record.to_text().as_bytes()).map_err(|e| io_err(&path, e))?;
        }
        let acc = evaluate(&eval_set, &archive, &outcome.best)?;
        log::info!("{variant} seed {seed}: {}", acc.summary_line());
        Ok(acc)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let results: Vec<CategoryAccuracy> =
        pool.install(|| tasks.par_iter().map(run).collect::<Result<_, _>>())?;

    let per_variant: Vec<(Variant, &[CategoryAccuracy])> = Variant::ALL
        .into_iter()
        .zip(results.chunks(seeds as usize))
        .collect();
    let mut rows = Vec::new();
    for (variant, runs) in &per_variant {
        let agg = aggregate_runs(runs)?;
        rows.push(ResultRow::from_aggregate(variant.as_str(), split.as_str(), &agg));
    }
    out.push_str(&render_table(&rows, split.as_str()));
    let full = per_variant[0].1;
    for (variant, runs) in &per_variant[1..] {
        for (field, test) in compare_runs(full, runs) {
            let detail = match test {
                Ok(t) => format!(
                    "t={:.4} dof={:.4} p={:.6}{}",
                    t.t,
                    t.dof,
                    t.p,
                    if t.degenerate { " degenerate" } else { "" }
                ),
                Err(e) => format!("p=n/a ({e})"),
            };
            let _ = writeln!(out, "welch full vs {variant} {}: {detail}", field.as_str());
        }
    }
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
        write_results_file(&rows, &d.join("results.csv"))?;
    }
    Ok(())
}

fn find_annotation_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_annotation_files(&p, found)?;
        } else {
            let ext_ok = matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("json" | "jsonl")
            );
            let stem_ok = p
                .file_stem()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.parse::<Split>().is_ok());
            if ext_ok && stem_ok {
                found.push(p);
            }
        }
    }
    Ok(())
}

/// Reads a CSV whose header names an id column (`object_id`, `fullId` or
/// `id`) and a `category` column.
pub fn read_category_table(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let headers = r.headers().map_err(|e| io_err(path, e))?.clone();
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    let id = find(&["object_id", "fullId", "id"])
        .ok_or_else(|| CliError::Io(format!("{}: no id column", path.display())))?;
    let cat = find(&["category"])
        .ok_or_else(|| CliError::Io(format!("{}: no category column", path.display())))?;
    let mut table = HashMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let key = rec[id].trim();
        let key = key.strip_prefix("wss.").unwrap_or(key);
        table.insert(key.to_string(), rec[cat].trim().to_string());
    }
    Ok(table)
}

fn cmd_validate_data(dir: &Path, categories: &Option<PathBuf>, out: &mut String) -> Result<(), CliError> {
    if !dir.is_dir() {
        return Err(CliError::Io(format!("{}: not a directory", dir.display())));
    }
    let mut files = Vec::new();
    find_annotation_files(dir, &mut files)?;
    if files.is_empty() {
        return Err(CliError::Io(format!(
            "{}: no train/val/test annotation files",
            dir.display()
        )));
    }
    let mut instances = Vec::new();
    for f in &files {
        log::info!("reading {}", f.display());
        instances.extend(load_annotations_with(f, LoadOptions { allow_unlabeled: true })?);
    }
    let table = categories.as_deref().map(read_category_table).transpose()?;
    let report = validate_counts(&instances, table.as_ref());
    out.push_str(&report.to_key_values());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "{} of {} dataset checks failed",
            report.failures().count(),
            report.checks.len()
        )))
    }
}

fn parse_sample(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("not a number: {v:?}")))
        })
        .collect()
}

fn cmd_render(results: &Path, split: &Option<String>, out: &mut String) -> Result<(), CliError> {
    let rows = read_results_file(results)?;
    let split = match split {
        Some(s) => s.clone(),
        None => rows
            .first()
            .map(|r| r.split.clone())
            .ok_or_else(|| CliError::Io(format!("{}: no rows", results.display())))?,
    };
    let rows: Vec<ResultRow> = rows.into_iter().filter(|r| r.split == split).collect();
    out.push_str(&render_table(&rows, &split));
    Ok(())
}

/// Runs one parsed command, appending its report to `out`.
pub fn execute(cli: &Cli, out: &mut String) -> Result<(), CliError> {
    match &cli.command {
        cmd @ Command::GenSynthetic { .. } => cmd_gen_synthetic(cmd, out),
        Command::Import {
            objects,
            descriptions,
            out: dest,
            provenance,
        } => cmd_import(objects, descriptions, dest, provenance, out),
        Command::Manifest { archive } => {
            let a = read_archive(archive)?;
            out.push_str(&a.manifest().dump(a.objects().len(), a.descriptions().len()));
            Ok(())
        }
        Command::Train {
            cfg,
            variant,
            seed,
            out: dir,
        } => cmd_train(cfg, variant, seed, dir, out),
        Command::Eval {
            cfg,
            checkpoint,
            split,
        } => cmd_eval(cfg, checkpoint, split, out),
        Command::Ablate {
            cfg,
            seeds,
            jobs,
            split,
            out: dir,
        } => cmd_ablate(cfg, *seeds, *jobs, split, dir, out),
        Command::ValidateData { snare, categories } => cmd_validate_data(snare, categories, out),
        Command::Welch { a, b } => {
            let r = welch_t(&parse_sample(a)?, &parse_sample(b)?)?;
            let _ = writeln!(out, "t={}\ndof={}\np={}\ndegenerate={}", r.t, r.dof, r.p, r.degenerate);
            Ok(())
        }
        Command::Render { results, split } => cmd_render(results, split, out),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut out = String::new();
    let result = execute(&cli, &mut out);
    print!("{out}");
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
