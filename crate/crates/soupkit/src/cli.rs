//! `soupkit` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};
use soupkit_core::data::{corrupt, CorruptionKind, PatternSpec, Split};
use soupkit_core::mixer::{barycentric_centroid_grid, mix, MixtureWeights, SimplexGridSpec};
use soupkit_core::model::{forward_embed, init_stock, EncoderConfig};
use soupkit_core::soup::{greedy_soup, season_random, self_season, LogitOptimizer, SeasonConfig, SelfSeasonConfig};
use soupkit_core::ssl::{inter_train, SslAlgorithm, SslConfig};
use soupkit_core::train::{train_supervised, TrainConfig};
use soupkit_core::{CheckpointMeta, Matrix, Role, TensorSet};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{ExperimentConfig, KnnSpec, Metric};
use crate::dataset_io::{load_dataset, save_dataset, DatasetFile};
use crate::error::{Error, Result};
use crate::report::{emit_ternary_svg, format_metrics_csv, parse_metrics_csv, report_curve, MetricRow};
use crate::runner::{run_experiment, Datasets, Evaluator};

#[derive(Debug, Parser)]
#[command(name = "soupkit", version, about = "Build, explore and season model soups of toy encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled pattern dataset.
    GenData(GenData),
    /// Corrupt a dataset, or list the severity tables.
    Corrupt(CorruptArgs),
    /// Write a freshly initialized stock encoder.
    Init(InitArgs),
    /// Supervised fine-tuning of a checkpoint.
    Train(TrainArgs),
    /// Self-supervised inter-training of a checkpoint.
    InterTrain(InterTrainArgs),
    /// Convex combination of checkpoints with explicit weights.
    Mix(MixArgs),
    /// Evaluate the line between two checkpoints and check linear mode connectivity.
    SweepPair(SweepPairArgs),
    /// Evaluate a barycentric grid over three checkpoints.
    SweepSimplex(SweepSimplexArgs),
    /// Greedy soup selected on a validation set.
    Greedy(GreedyArgs),
    /// Random simplex search scored on few-shot labels.
    Season(SeasonArgs),
    /// Label-free mixture search by kNN-entropy descent.
    SelfSeason(SelfSeasonArgs),
    /// Evaluate one checkpoint.
    Eval(EvalArgs),
    /// Run a full experiment config.
    Run(RunArgs),
    /// Render a ternary SVG or an LMC curve from a metrics table.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 16)]
    pub side: usize,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub max_shift: Option<usize>,
    /// Seed of the class templates; datasets of one task must share it.
    #[arg(long)]
    pub template_seed: Option<u64>,
    /// Sample seed; the template seed defaults to it.
    #[arg(long, env = "SOUPKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Print the severity tables and exit.
    #[arg(long)]
    pub list: bool,
    #[arg(long, required_unless_present = "list")]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "list")]
    pub kind: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub severity: u8,
    #[arg(long, env = "SOUPKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, required_unless_present = "list")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, default_value_t = 256)]
    pub input_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, env = "SOUPKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub stock: PathBuf,
    /// Labeled dataset file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().peak_lr)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    /// Skip the linear probe before full fine-tuning.
    #[arg(long)]
    pub no_lpft: bool,
    #[arg(long, env = "SOUPKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterTrainArgs {
    #[arg(long)]
    pub stock: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// masked_recon, infonce or dim_contrastive.
    #[arg(long)]
    pub algorithm: String,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub local_views: bool,
    #[arg(long, env = "SOUPKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub ingredients: Vec<PathBuf>,
    /// Comma-separated; uniform when omitted.
    #[arg(long, value_delimiter = ',')]
    pub weights: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Dataset and metric used to score mixtures.
#[derive(Debug, Args)]
pub struct EvalOpts {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "head_accuracy", value_parser = parse_metric)]
    pub metric: Metric,
    /// Labeled reference set for knn_accuracy.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[arg(long, default_value_t = KnnSpec::default().k)]
    pub k: usize,
    #[arg(long, default_value_t = KnnSpec::default().temperature)]
    pub temperature: f64,
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| format!("unknown metric `{s}`"))
}

#[derive(Debug, Args)]
pub struct SweepPairArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 11)]
    pub points: usize,
    #[command(flatten)]
    pub eval: EvalOpts,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepSimplexArgs {
    #[arg(long, num_args = 3, required = true)]
    pub ingredients: Vec<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub resolution: usize,
    #[command(flatten)]
    pub eval: EvalOpts,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GreedyArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub ingredients: Vec<PathBuf>,
    #[command(flatten)]
    pub eval: EvalOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeasonArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub ingredients: Vec<PathBuf>,
    /// Labeled few-shot dataset file.
    #[arg(long)]
    pub few_shot: PathBuf,
    #[arg(long, default_value_t = SeasonConfig::default().trials)]
    pub trials: usize,
    #[arg(long, default_value_t = KnnSpec::default().k)]
    pub k: usize,
    #[arg(long, default_value_t = KnnSpec::default().temperature)]
    pub temperature: f64,
    #[arg(long, env = "SOUPKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelfSeasonArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub ingredients: Vec<PathBuf>,
    /// Dataset file whose inputs are used without labels.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = SelfSeasonConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = SelfSeasonConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = SelfSeasonConfig::default().lr_start)]
    pub lr_start: f64,
    #[arg(long, default_value_t = SelfSeasonConfig::default().lr_end)]
    pub lr_end: f64,
    #[arg(long, default_value_t = SelfSeasonConfig::default().fd_step)]
    pub fd_step: f64,
    /// Adam with weight decay on the logits instead of plain gradient descent.
    #[arg(long)]
    pub adamw: bool,
    #[arg(long, default_value_t = KnnSpec::default().k)]
    pub k: usize,
    #[arg(long, default_value_t = KnnSpec::default().temperature)]
    pub temperature: f64,
    #[arg(long, env = "SOUPKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub eval: EvalOpts,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "SOUPKIT_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// `key.path=value` override of any config field; repeatable.
    #[arg(long = "set")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub split: String,
    #[arg(long, default_value = "head_accuracy")]
    pub metric: String,
    /// Emit the LMC curve (CSV + JSON) of a pair sweep instead of a ternary SVG.
    #[arg(long)]
    pub curve: bool,
    /// Output file; for curves, the CSV path (the JSON goes next to it).
    #[arg(long)]
    pub out: PathBuf,
}

fn ingredients(paths: &[PathBuf]) -> Result<Vec<TensorSet>> {
    paths.iter().map(|p| Ok(load_checkpoint(p)?.0)).collect()
}

fn refs(sets: &[TensorSet]) -> Vec<&TensorSet> {
    sets.iter().collect()
}

fn soup_meta(parts: &[&TensorSet], weights: &MixtureWeights, method: &str, seed: u64) -> CheckpointMeta {
    let mut meta = CheckpointMeta::new(Role::Soup, seed)
        .with_param("method", method)
        .with_param("weights", weights.as_slice().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"));
    for p in parts {
        let id = p.fingerprint();
        if !meta.lineage.contains(&id) {
            meta.lineage.push(id);
        }
    }
    meta
}

fn labeled_file(path: &Path) -> Result<soupkit_core::data::LabeledDataset> {
    match load_dataset(path)? {
        DatasetFile::Labeled(d) => Ok(d),
        DatasetFile::Unlabeled(_) => Err(Error::Config(format!("{} has no labels", path.display()))),
    }
}

fn unlabeled_file(path: &Path) -> Result<soupkit_core::data::UnlabeledDataset> {
    Ok(match load_dataset(path)? {
        DatasetFile::Labeled(d) => d.unlabeled(path.display().to_string()),
        DatasetFile::Unlabeled(d) => d,
    })
}

impl EvalOpts {
    fn datasets(&self) -> Result<Datasets> {
        let mut data = Datasets::new();
        data.insert("data".into(), load_dataset(&self.data)?);
        if let Some(r) = &self.refs {
            data.insert("refs".into(), load_dataset(r)?);
        }
        Ok(data)
    }

    fn evaluator<'a>(&self, data: &'a Datasets) -> Result<Evaluator<'a>> {
        let knn = KnnSpec { k: self.k, temperature: self.temperature, majority: false }.to_core()?;
        Ok(Evaluator { data, knn, knn_refs: self.refs.as_ref().map(|_| "refs") })
    }
}

/// Scores labeled mixtures of `parts` in parallel, keeping row order.
fn sweep(parts: &[&TensorSet], mixtures: Vec<(String, MixtureWeights)>, opts: &EvalOpts) -> Result<Vec<MetricRow>> {
    let data = opts.datasets()?;
    let eval = opts.evaluator(&data)?;
    // Rows are labeled by the data file's stem, so `plot --split` can name them.
    let split = opts.data.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().replace(',', "_"));
    mixtures
        .par_iter()
        .map(|(id, w)| {
            let value = eval.metric(&mix(parts, w)?, "data", opts.metric)?;
            Ok(MetricRow {
                mixture_id: id.clone(),
                weights: w.as_slice().to_vec(),
                split: split.clone(),
                metric: opts.metric.as_str().into(),
                value,
            })
        })
        .collect::<Vec<Result<MetricRow>>>()
        .into_iter()
        .collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let base = PatternSpec::new(a.classes, a.side, a.template_seed.unwrap_or(a.seed));
            let spec = PatternSpec {
                noise: a.noise.unwrap_or(base.noise),
                max_shift: a.max_shift.unwrap_or(base.max_shift),
                ..base
            };
            let split = Split::parse(&a.split).ok_or_else(|| Error::Config(format!("unknown split `{}`", a.split)))?;
            let ds = spec.generate(a.samples, a.seed, split)?;
            save_dataset(&a.out, &DatasetFile::Labeled(ds))?;
            print(&json!({ "out": a.out, "samples": a.samples, "input_dim": spec.input_dim() }));
        }
        Command::Corrupt(a) => {
            if a.list {
                println!("kind            parameter  severity 1..5");
                for kind in CorruptionKind::ALL {
                    let table = kind.table().map(|v| v.to_string()).join(", ");
                    println!("{:<15} {:<10} {table}", kind.as_str(), kind.parameter_name());
                }
                return Ok(());
            }
            let kind_name = a.kind.expect("required by clap");
            let kind = CorruptionKind::parse(&kind_name)
                .ok_or_else(|| Error::Config(format!("unknown corruption `{kind_name}`")))?;
            let out = match load_dataset(a.input.expect("required by clap"))? {
                DatasetFile::Labeled(d) => DatasetFile::Labeled(corrupt(&d, kind, a.severity, a.seed)?),
                DatasetFile::Unlabeled(d) => DatasetFile::Unlabeled(corrupt(&d, kind, a.severity, a.seed)?),
            };
            save_dataset(a.out.expect("required by clap"), &out)?;
        }
        Command::Init(a) => {
            let cfg = EncoderConfig::new(a.input_dim, a.hidden, a.embed_dim)?;
            let params = init_stock(&cfg, a.seed)?;
            save_checkpoint(&a.out, &params, &CheckpointMeta::new(Role::Stock, a.seed))?;
            print(&json!({ "out": a.out, "params": params.num_params() }));
        }
        Command::Train(a) => {
            let (stock, _) = load_checkpoint(&a.stock)?;
            let cfg = TrainConfig {
                steps: a.steps,
                peak_lr: a.lr,
                batch_size: a.batch_size,
                lpft: !a.no_lpft,
                seed: a.seed,
                ..TrainConfig::default()
            };
            let out = train_supervised(&stock, &labeled_file(&a.data)?, &cfg)?;
            save_checkpoint(&a.out, &out.params, &out.meta)?;
            print(&json!({ "out": a.out, "initial_loss": out.initial_loss, "final_loss": out.final_loss }));
        }
        Command::InterTrain(a) => {
            let (stock, _) = load_checkpoint(&a.stock)?;
            let alg = SslAlgorithm::parse(&a.algorithm)
                .ok_or_else(|| Error::Config(format!("unknown SSL algorithm `{}`", a.algorithm)))?;
            let d = SslConfig::new(alg);
            let cfg = SslConfig {
                steps: a.steps.unwrap_or(d.steps),
                peak_lr: a.lr.unwrap_or(d.peak_lr),
                batch_size: a.batch_size.unwrap_or(d.batch_size),
                local_views: a.local_views,
                seed: a.seed,
                ..d
            };
            let out = inter_train(&stock, &unlabeled_file(&a.data)?, &cfg)?;
            save_checkpoint(&a.out, &out.params, &out.meta)?;
            print(&json!({ "out": a.out, "initial_loss": out.initial_loss, "final_loss": out.final_loss }));
        }
        Command::Mix(a) => {
            let sets = ingredients(&a.ingredients)?;
            let parts = refs(&sets);
            let w = if a.weights.is_empty() {
                MixtureWeights::uniform(parts.len())
            } else {
                MixtureWeights::new(a.weights)?
            };
            let soup = mix(&parts, &w)?;
            save_checkpoint(&a.out, &soup, &soup_meta(&parts, &w, "mix", 0))?;
        }
        Command::SweepPair(a) => {
            if a.points < 2 {
                return Err(Error::Config("a sweep needs at least 2 points".into()));
            }
            let sets = ingredients(&[a.a.clone(), a.b.clone()])?;
            let mixtures = (0..a.points)
                .map(|k| Ok((format!("lambda{k}"), MixtureWeights::pair(k as f64 / (a.points - 1) as f64)?)))
                .collect::<Result<Vec<_>>>()?;
            let rows = sweep(&refs(&sets), mixtures, &a.eval)?;
            let (split, metric) = (rows[0].split.clone(), rows[0].metric.clone());
            let curve = report_curve(&rows, &split, &metric)?;
            write(&a.out_dir.join("metrics.csv"), &format_metrics_csv(&rows))?;
            write(&a.out_dir.join("curve.csv"), &curve.to_csv())?;
            let summary = curve.to_json(&split, &metric);
            write(&a.out_dir.join("curve.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
            print(&summary);
        }
        Command::SweepSimplex(a) => {
            let sets = ingredients(&a.ingredients)?;
            let grid = barycentric_centroid_grid(&SimplexGridSpec::triangle(a.resolution))?;
            let mut mixtures: Vec<_> = grid.into_iter().enumerate().map(|(i, w)| (format!("grid{i}"), w)).collect();
            mixtures.extend((0..3).map(|j| (format!("corner{j}"), MixtureWeights::one_hot(3, j))));
            let rows = sweep(&refs(&sets), mixtures, &a.eval)?;
            let svg = emit_ternary_svg(&rows, &rows[0].split, &rows[0].metric)?;
            write(&a.out_dir.join("metrics.csv"), &format_metrics_csv(&rows))?;
            write(&a.out_dir.join("ternary.svg"), &svg)?;
            let best = rows.iter().fold(&rows[0], |b, r| if r.value > b.value { r } else { b });
            print(&json!({ "rows": rows.len(), "best": best.mixture_id, "best_value": best.value }));
        }
        Command::Greedy(a) => {
            let sets = ingredients(&a.ingredients)?;
            let parts = refs(&sets);
            let data = a.eval.datasets()?;
            let eval = a.eval.evaluator(&data)?;
            let result = greedy_soup(&parts, |p| {
                eval.metric(p, "data", a.eval.metric).map_err(|e| soupkit_core::Error::EvalFailed(e.to_string()))
            })?;
            let mut w = vec![0.0; parts.len()];
            result.selected.iter().for_each(|&i| w[i] = 1.0 / result.selected.len() as f64);
            let w = MixtureWeights::new(w)?;
            save_checkpoint(&a.out, &result.soup, &soup_meta(&parts, &w, "greedy", 0))?;
            print(&json!({ "selected": result.selected, "score": result.score, "scores": result.ingredient_scores }));
        }
        Command::Season(a) => {
            let sets = ingredients(&a.ingredients)?;
            let parts = refs(&sets);
            let knn = KnnSpec { k: a.k, temperature: a.temperature, majority: false }.to_core()?;
            let cfg = SeasonConfig { trials: a.trials, knn, seed: a.seed };
            let out = season_random(&parts, &labeled_file(&a.few_shot)?, &cfg, |p: &TensorSet, x: &Matrix| {
                forward_embed(p, x)
            })?;
            save_checkpoint(&a.out, &mix(&parts, &out.weights)?, &soup_meta(&parts, &out.weights, "season", a.seed))?;
            print(&json!({ "weights": out.weights.as_slice(), "score": out.score, "best_trial": out.best_trial }));
        }
        Command::SelfSeason(a) => {
            let sets = ingredients(&a.ingredients)?;
            let parts = refs(&sets);
            let knn = KnnSpec { k: a.k, temperature: a.temperature, majority: false }.to_core()?;
            let cfg = SelfSeasonConfig {
                epochs: a.epochs,
                lr_start: a.lr_start,
                lr_end: a.lr_end,
                batch_size: a.batch_size,
                knn,
                fd_step: a.fd_step,
                optimizer: if a.adamw { LogitOptimizer::AdamW } else { LogitOptimizer::Sgd },
                seed: a.seed,
            };
            let data = unlabeled_file(&a.data)?;
            let out = self_season(&parts, &data.inputs, &cfg, |p: &TensorSet, x: &Matrix| forward_embed(p, x))?;
            save_checkpoint(
                &a.out,
                &mix(&parts, &out.weights)?,
                &soup_meta(&parts, &out.weights, "self_season", a.seed),
            )?;
            print(&json!({ "weights": out.weights.as_slice(), "entropy_curve": out.entropy_curve }));
        }
        Command::Eval(a) => {
            let (params, meta) = load_checkpoint(&a.checkpoint)?;
            let data = a.eval.datasets()?;
            let value = a.eval.evaluator(&data)?.metric(&params, "data", a.eval.metric)?;
            print(
                &json!({ "checkpoint": a.checkpoint, "role": meta.role.as_str(), "metric": a.eval.metric.as_str(), "value": value }),
            );
        }
        Command::Run(a) => {
            let mut overrides = a.set.clone();
            if let Some(seed) = a.seed {
                overrides.push(format!("seed={seed}"));
            }
            if let Some(dir) = &a.out_dir {
                overrides.push(format!("out_dir={}", Value::String(dir.display().to_string())));
            }
            if let Some(w) = a.workers {
                overrides.push(format!("workers={w}"));
            }
            let cfg = ExperimentConfig::load(&a.config, &overrides)?;
            let manifest = run_experiment(&cfg)?;
            print(&json!({
                "out_dir": cfg.out_dir,
                "config_hash": manifest.config_hash,
                "jobs": manifest.jobs.len(),
                "rows": manifest.rows.len(),
            }));
        }
        Command::Plot(a) => {
            let text = std::fs::read_to_string(&a.metrics).map_err(|e| Error::io(&a.metrics, e))?;
            let rows = parse_metrics_csv(&text)?;
            if a.curve {
                let curve = report_curve(&rows, &a.split, &a.metric)?;
                write(&a.out, &curve.to_csv())?;
                let summary = curve.to_json(&a.split, &a.metric);
                write(&a.out.with_extension("json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
            } else {
                write(&a.out, &emit_ternary_svg(&rows, &a.split, &a.metric)?)?;
            }
        }
    }
    Ok(())
}
