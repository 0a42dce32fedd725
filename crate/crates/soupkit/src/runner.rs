//! Executes an [`ExperimentConfig`]: stock, inter-trainings, fine-tunings,
//! mixing and evaluation, writing checkpoints, `metrics.csv`, `report.json`
//! and `manifest.json` into the output directory.
//!
//! Every job seed is derived from the run seed, the job kind and the job
//! index, and parallel results are collected in job order, so the worker
//! count never changes an output byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use soupkit_core::data::{corrupt, split_even_odd, CorruptionKind, LabeledDataset, Samples, Split, UnlabeledDataset};
use soupkit_core::eval::{head_accuracy, knn_accuracy, knn_entropy, KnnConfig};
use soupkit_core::mixer::{barycentric_centroid_grid, mix, MixtureWeights, SimplexGridSpec};
use soupkit_core::model::{forward_embed, init_stock, EncoderConfig};
use soupkit_core::rng::derive_seed;
use soupkit_core::soup::{draw_trials, few_shot_score, greedy_soup, select_best, self_season};
use soupkit_core::ssl::inter_train;
use soupkit_core::train::train_supervised;
use soupkit_core::{CheckpointMeta, Matrix, Role, TensorSet};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{DatasetSpec, ExperimentConfig, Metric, MixSpec, SeasonScore, StockSpec};
use crate::dataset_io::{load_dataset, DatasetFile};
use crate::error::{Error, Result};
use crate::report::{emit_ternary_svg, format_metrics_csv, report_curve, MetricRow};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: String,
    pub seed: u64,
    /// File name inside the output directory.
    pub checkpoint: Option<String>,
    pub fingerprint: Option<String>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureRecord {
    pub id: String,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub jobs: Vec<JobRecord>,
    pub mixtures: Vec<MixtureRecord>,
    pub metrics: Option<String>,
    pub report: Option<String>,
    pub artifacts: Vec<String>,
    /// Error message of an aborted run; completed jobs stay recorded.
    pub failed: Option<String>,
    #[serde(skip)]
    pub rows: Vec<MetricRow>,
}

/// A dataset resolved from the config, with or without labels.
pub type Datasets = BTreeMap<String, DatasetFile>;

fn labeled<'a>(data: &'a Datasets, name: &str) -> Result<&'a LabeledDataset> {
    match data.get(name) {
        Some(DatasetFile::Labeled(d)) => Ok(d),
        Some(DatasetFile::Unlabeled(_)) => Err(Error::Config(format!("dataset `{name}` has no labels"))),
        None => Err(Error::Config(format!("unknown dataset `{name}`"))),
    }
}

fn inputs<'a>(data: &'a Datasets, name: &str) -> Result<&'a Matrix> {
    data.get(name).map(DatasetFile::inputs).ok_or_else(|| Error::Config(format!("unknown dataset `{name}`")))
}

/// Label-free view of a dataset, tagged with its name as the source.
fn unlabeled(data: &Datasets, name: &str) -> Result<UnlabeledDataset> {
    match data.get(name) {
        Some(DatasetFile::Labeled(d)) => Ok(d.unlabeled(name)),
        Some(DatasetFile::Unlabeled(d)) => Ok(d.clone()),
        None => Err(Error::Config(format!("unknown dataset `{name}`"))),
    }
}

/// Materializes every dataset of the config. Generated datasets share the
/// task's class templates; each draws its samples from a seed derived from
/// its name.
pub fn resolve_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    fn resolve(cfg: &ExperimentConfig, name: &str, out: &mut Datasets) -> Result<()> {
        if out.contains_key(name) {
            return Ok(());
        }
        let spec = &cfg.datasets[name];
        let seed_for = |kind: &str| derive_seed(cfg.seed, &format!("{kind}/{name}"), 0);
        let parent = |out: &mut Datasets, from: &str| -> Result<DatasetFile> {
            resolve(cfg, from, out)?;
            Ok(out[from].clone())
        };
        let ds = match spec {
            DatasetSpec::Generate { n, split } => {
                let pattern = cfg.task.pattern_spec(derive_seed(cfg.seed, "templates", 0));
                let split = Split::parse(split).ok_or_else(|| Error::Config(format!("unknown split `{split}`")))?;
                DatasetFile::Labeled(pattern.generate(*n, seed_for("dataset"), split)?)
            }
            DatasetSpec::Corrupt { from, kind, severity } => {
                let kind =
                    CorruptionKind::parse(kind).ok_or_else(|| Error::Config(format!("unknown corruption `{kind}`")))?;
                match parent(out, from)? {
                    DatasetFile::Labeled(d) => DatasetFile::Labeled(corrupt(&d, kind, *severity, seed_for("corrupt"))?),
                    DatasetFile::Unlabeled(d) => {
                        DatasetFile::Unlabeled(corrupt(&d, kind, *severity, seed_for("corrupt"))?)
                    }
                }
            }
            DatasetSpec::Even(from) | DatasetSpec::Odd(from) => {
                fn half<D: Samples>(d: &D, even: bool) -> D {
                    let (e, o) = split_even_odd(d);
                    if even {
                        e
                    } else {
                        o
                    }
                }
                let even = matches!(spec, DatasetSpec::Even(_));
                match parent(out, from)? {
                    DatasetFile::Labeled(d) => DatasetFile::Labeled(half(&d, even)),
                    DatasetFile::Unlabeled(d) => DatasetFile::Unlabeled(half(&d, even)),
                }
            }
            DatasetSpec::FewShot { from, per_class } => match parent(out, from)? {
                DatasetFile::Labeled(d) => DatasetFile::Labeled(d.few_shot(*per_class)),
                DatasetFile::Unlabeled(_) => {
                    return Err(Error::Config(format!("few-shot source `{from}` has no labels")))
                }
            },
            DatasetSpec::File(path) => load_dataset(path)?,
        };
        out.insert(name.to_string(), ds);
        Ok(())
    }
    let mut out = Datasets::new();
    for name in cfg.datasets.keys() {
        resolve(cfg, name, &mut out).map_err(|e| e.in_job(format!("dataset/{name}")))?;
    }
    Ok(out)
}

/// Computes evaluation metrics of parameter sets on named datasets.
pub struct Evaluator<'a> {
    pub data: &'a Datasets,
    pub knn: KnnConfig,
    pub knn_refs: Option<&'a str>,
}

impl Evaluator<'_> {
    pub fn metric(&self, params: &TensorSet, split: &str, metric: Metric) -> Result<f64> {
        Ok(match metric {
            Metric::HeadAccuracy => head_accuracy(params, labeled(self.data, split)?)?,
            Metric::KnnAccuracy => {
                let refs = self.knn_refs.ok_or_else(|| Error::Config("knn_accuracy needs reference data".into()))?;
                knn_accuracy(params, labeled(self.data, refs)?, labeled(self.data, split)?, &self.knn)?
            }
            Metric::KnnEntropy => knn_entropy(&forward_embed(params, inputs(self.data, split)?)?, &self.knn)?,
        })
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run<'_> {
    fn save(&mut self, id: &str, kind: &str, file: &str, params: &TensorSet, meta: &CheckpointMeta) -> Result<()> {
        save_checkpoint(self.dir.join(file), params, meta)?;
        self.manifest.jobs.push(JobRecord {
            id: id.into(),
            kind: kind.into(),
            seed: meta.seed,
            checkpoint: Some(file.into()),
            fingerprint: Some(params.fingerprint()),
            status: "done".into(),
        });
        Ok(())
    }

    fn failed_job(&mut self, id: &str, kind: &str, seed: u64) {
        self.manifest.jobs.push(JobRecord {
            id: id.into(),
            kind: kind.into(),
            seed,
            checkpoint: None,
            fingerprint: None,
            status: "failed".into(),
        });
    }

    fn write_text(&mut self, file: &str, text: &str) -> Result<()> {
        let path = self.dir.join(file);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    fn write_manifest(&mut self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        self.write_text(MANIFEST_FILE, &text)
    }

    fn stock(&mut self, data: &Datasets) -> Result<TensorSet> {
        let cfg = self.cfg;
        let seed = derive_seed(cfg.seed, "stock", 0);
        let (params, meta) = match &cfg.stock {
            StockSpec::Path(path) => load_checkpoint(path)?,
            StockSpec::Init { hidden_dims, embed_dim, pretrain } => {
                let enc = EncoderConfig::new(cfg.task.side * cfg.task.side, hidden_dims.clone(), *embed_dim)?;
                let mut params = init_stock(&enc, seed)?;
                let mut meta =
                    CheckpointMeta::new(Role::Stock, seed).with_param("hidden_dims", format!("{hidden_dims:?}"));
                if let Some(p) = pretrain {
                    let ssl = p.to_core(derive_seed(cfg.seed, "pretrain", 0))?;
                    params = inter_train(&params, &unlabeled(data, &p.data)?, &ssl)?.params;
                    meta = meta.with_param("pretrain", ssl.algorithm.as_str()).with_param("pretrain_steps", ssl.steps);
                }
                (params, meta)
            }
        };
        self.save("stock", "stock", "stock.soupckpt", &params, &meta)?;
        Ok(params)
    }

    /// Runs jobs in parallel, saves the successful ones in job order and
    /// returns the first failure (by job index).
    fn jobs<J, F>(&mut self, kind: &str, jobs: Vec<J>, run: F) -> Result<Vec<TensorSet>>
    where
        J: Send + Sync,
        F: Fn(&J) -> (String, String, u64, Result<(TensorSet, CheckpointMeta)>) + Send + Sync,
    {
        let results: Vec<_> = jobs.par_iter().map(run).collect();
        let mut out = Vec::with_capacity(results.len());
        let mut first_err = None;
        for (id, file, seed, res) in results {
            match res {
                Ok((params, meta)) => {
                    self.save(&id, kind, &file, &params, &meta)?;
                    out.push(params);
                }
                Err(e) => {
                    self.failed_job(&id, kind, seed);
                    first_err.get_or_insert(e.in_job(id));
                }
            }
        }
        first_err.map_or(Ok(out), Err)
    }

    fn execute(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let data = resolve_datasets(cfg)?;
        let stock = self.stock(&data).map_err(|e| e.in_job("stock"))?;

        let inter = self.jobs("inter_train", cfg.inter_trainings.iter().enumerate().collect(), |(i, spec)| {
            let seed = derive_seed(cfg.seed, "inter_train", *i as u64);
            let res = (|| {
                let ssl = spec.to_core(seed)?;
                let out = inter_train(&stock, &unlabeled(&data, &spec.data)?, &ssl)?;
                Ok((out.params, out.meta))
            })();
            (format!("inter_train/{i}"), format!("inter{i}.soupckpt"), seed, res)
        })?;

        let parents: Vec<&TensorSet> = if inter.is_empty() { vec![&stock] } else { inter.iter().collect() };
        let n = cfg.fine_tunings.len();
        let ft_jobs: Vec<(usize, usize)> = (0..parents.len()).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let fine = self.jobs("fine_tune", ft_jobs, |&(i, j)| {
            let seed = derive_seed(cfg.seed, "fine_tune", (i * n + j) as u64);
            let res = (|| {
                let spec = &cfg.fine_tunings[j];
                let out = train_supervised(parents[i], labeled(&data, &spec.data)?, &spec.to_core(seed)?)?;
                Ok((out.params, out.meta))
            })();
            (format!("fine_tune/{i}/{j}"), format!("fine{i}_{j}.soupckpt"), seed, res)
        })?;

        let mut ingredients: Vec<&TensorSet> = Vec::new();
        if cfg.include_stock {
            ingredients.push(&stock);
        }
        ingredients.extend(if fine.is_empty() { inter.iter() } else { fine.iter() });
        let eval = Evaluator { data: &data, knn: cfg.eval.knn.to_core()?, knn_refs: cfg.eval.knn_refs.as_deref() };
        let job = format!("mix/{}", cfg.mix.name());
        let plan = self.plan_mixtures(&ingredients, &eval, &data).map_err(|e| e.in_job(&job))?;
        if let Some((weights, soup)) = &plan.soup {
            let mut meta = CheckpointMeta::new(Role::Soup, cfg.seed).with_param("method", cfg.mix.name());
            meta.lineage = ingredients.iter().map(|p| p.fingerprint()).collect();
            meta.lineage.dedup();
            meta = meta.with_param("weights", join(weights.as_slice()));
            self.save(&job, "soup", "soup.soupckpt", soup, &meta)?;
        }
        self.manifest.mixtures = plan
            .mixtures
            .iter()
            .map(|(id, w)| MixtureRecord { id: id.clone(), weights: w.as_slice().to_vec() })
            .collect();

        let rows = self.evaluate(&plan, &ingredients, &eval)?;
        self.write_text(METRICS_FILE, &format_metrics_csv(&rows))?;
        self.manifest.metrics = Some(METRICS_FILE.into());

        let mut report = plan.report;
        report["method"] = json!(cfg.mix.name());
        report["config"] = serde_json::to_value(cfg)?;
        report["seeds"] = json!(self.manifest.jobs.iter().map(|j| (j.id.clone(), j.seed)).collect::<BTreeMap<_, _>>());
        let mut curves = BTreeMap::new();
        for split in &cfg.eval.splits {
            for metric in &cfg.eval.metrics {
                let stem = format!("{split}_{}", metric.as_str());
                match &cfg.mix {
                    MixSpec::Simplex { .. } => {
                        let svg = emit_ternary_svg(&rows, split, metric.as_str())?;
                        let file = format!("ternary_{stem}.svg");
                        self.write_text(&file, &svg)?;
                        self.manifest.artifacts.push(file);
                    }
                    MixSpec::PairSweep { .. } => {
                        let curve = report_curve(&rows, split, metric.as_str())?;
                        let file = format!("curve_{stem}.csv");
                        self.write_text(&file, &curve.to_csv())?;
                        self.manifest.artifacts.push(file);
                        curves.insert(stem, curve.to_json(split, metric.as_str()));
                    }
                    _ => {}
                }
            }
        }
        if !curves.is_empty() {
            report["curves"] = json!(curves);
        }
        self.write_text(REPORT_FILE, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        self.manifest.report = Some(REPORT_FILE.into());
        self.manifest.rows = rows;
        Ok(())
    }

    fn plan_mixtures(&self, ingredients: &[&TensorSet], eval: &Evaluator, data: &Datasets) -> Result<MixPlan> {
        let cfg = self.cfg;
        let m = ingredients.len();
        let corners = |prefix: &str| -> Vec<(String, MixtureWeights)> {
            (0..m).map(|k| (format!("{prefix}{k}"), MixtureWeights::one_hot(m, k))).collect()
        };
        let mut plan = MixPlan { mixtures: Vec::new(), pair: None, soup: None, report: json!({}) };
        match &cfg.mix {
            MixSpec::Simplex { resolution } => {
                let grid = barycentric_centroid_grid(&SimplexGridSpec::triangle(*resolution))?;
                plan.mixtures = grid.into_iter().enumerate().map(|(i, w)| (format!("grid{i}"), w)).collect();
                plan.mixtures.extend(corners("corner"));
            }
            MixSpec::PairSweep { points, pair } => {
                plan.pair = Some(*pair);
                plan.mixtures = (0..*points)
                    .map(|k| Ok((format!("lambda{k}"), MixtureWeights::pair(k as f64 / (*points - 1) as f64)?)))
                    .collect::<Result<_>>()?;
            }
            MixSpec::Uniform => {
                plan.mixtures = corners("ingredient");
                let w = MixtureWeights::uniform(m);
                plan.soup = Some((w.clone(), mix(ingredients, &w)?));
                plan.mixtures.push(("soup".into(), w));
            }
            MixSpec::Greedy { select_on, metric } => {
                let result = greedy_soup(ingredients, |p| {
                    eval.metric(p, select_on, *metric).map_err(|e| soupkit_core::Error::EvalFailed(e.to_string()))
                })?;
                let mut w = vec![0.0; m];
                result.selected.iter().for_each(|&i| w[i] = 1.0 / result.selected.len() as f64);
                let w = MixtureWeights::new(w)?;
                plan.report = json!({
                    "weights": w.as_slice(),
                    "selected": result.selected,
                    "scores": result.ingredient_scores,
                    "score": result.score,
                    "trace": result.trace.iter().map(|s| json!({
                        "candidate": s.candidate,
                        "score": s.score,
                        "accepted": s.accepted,
                    })).collect::<Vec<_>>(),
                });
                plan.mixtures = corners("ingredient");
                plan.mixtures.push(("soup".into(), w.clone()));
                plan.soup = Some((w, result.soup));
            }
            MixSpec::Season { few_shot, trials, score } => {
                let shots = labeled(data, few_shot)?;
                let candidates = draw_trials(m, *trials, derive_seed(cfg.seed, "season", 0));
                let scores = candidates
                    .par_iter()
                    .map(|w| {
                        let soup = mix(ingredients, w)?;
                        match score {
                            SeasonScore::Knn => {
                                few_shot_score(&soup, shots, &eval.knn, &mut |p: &TensorSet, x: &Matrix| {
                                    forward_embed(p, x)
                                })
                            }
                            SeasonScore::Head => head_accuracy(&soup, shots),
                        }
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .collect::<soupkit_core::Result<Vec<f64>>>()?;
                let best = select_best(candidates, scores)?;
                plan.report = json!({
                    "weights": best.weights.as_slice(),
                    "score": best.score,
                    "best_trial": best.best_trial,
                    "scores": best.trial_scores,
                });
                self.season_mixtures(&mut plan, ingredients, best.weights)?;
            }
            MixSpec::SelfSeason { data: unl, .. } => {
                let sc = cfg
                    .mix
                    .self_season_config(eval.knn, derive_seed(cfg.seed, "self_season", 0))
                    .expect("self-season spec");
                let out =
                    self_season(ingredients, inputs(data, unl)?, &sc, |p: &TensorSet, x: &Matrix| forward_embed(p, x))?;
                plan.report = json!({
                    "weights": out.weights.as_slice(),
                    "logits": out.logits,
                    "steps": out.steps,
                    "curves": { "entropy": out.entropy_curve },
                });
                self.season_mixtures(&mut plan, ingredients, out.weights)?;
            }
        }
        Ok(plan)
    }

    fn season_mixtures(&self, plan: &mut MixPlan, ingredients: &[&TensorSet], w: MixtureWeights) -> Result<()> {
        let m = ingredients.len();
        plan.mixtures = (0..m).map(|k| (format!("ingredient{k}"), MixtureWeights::one_hot(m, k))).collect();
        plan.mixtures.push(("uniform".into(), MixtureWeights::uniform(m)));
        plan.mixtures.push(("soup".into(), w.clone()));
        plan.soup = Some((w.clone(), mix(ingredients, &w)?));
        Ok(())
    }

    fn evaluate(&self, plan: &MixPlan, ingredients: &[&TensorSet], eval: &Evaluator) -> Result<Vec<MetricRow>> {
        let cfg = self.cfg;
        let members: Vec<&TensorSet> = match plan.pair {
            Some([a, b]) => vec![ingredients[a], ingredients[b]],
            None => ingredients.to_vec(),
        };
        let per_mixture: Vec<Result<Vec<MetricRow>>> = plan
            .mixtures
            .par_iter()
            .map(|(id, w)| {
                let params = mix(&members, w)?;
                let mut rows = Vec::new();
                for split in &cfg.eval.splits {
                    for &metric in &cfg.eval.metrics {
                        let value = eval.metric(&params, split, metric).map_err(|e| e.in_job(format!("eval/{id}")))?;
                        rows.push(MetricRow {
                            mixture_id: id.clone(),
                            weights: w.as_slice().to_vec(),
                            split: split.clone(),
                            metric: metric.as_str().into(),
                            value,
                        });
                    }
                }
                Ok(rows)
            })
            .collect();
        let mut rows = Vec::new();
        for r in per_mixture {
            rows.extend(r?);
        }
        Ok(rows)
    }
}

struct MixPlan {
    /// Mixture ids and weights, in row order.
    mixtures: Vec<(String, MixtureWeights)>,
    /// Ingredient indices of a pair sweep; the weights then cover the pair only.
    pair: Option<[usize; 2]>,
    soup: Option<(MixtureWeights, TensorSet)>,
    report: Value,
}

fn join(w: &[f64]) -> String {
    w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// Runs the experiment on a pool of `cfg.workers` threads. On failure the
/// manifest is still written, with completed jobs and the error recorded.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        method: cfg.mix.name().into(),
        jobs: Vec::new(),
        mixtures: Vec::new(),
        metrics: None,
        report: None,
        artifacts: Vec::new(),
        failed: None,
        rows: Vec::new(),
    };
    let mut run = Run { cfg, dir, manifest };
    let outcome = pool.install(|| run.execute());
    if let Err(e) = &outcome {
        run.manifest.failed = Some(e.to_string());
    }
    run.write_manifest()?;
    outcome.map(|()| run.manifest)
}

/// Reads the metrics table of a finished run.
pub fn read_metrics(dir: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = dir.as_ref().join(METRICS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))?;
    crate::report::parse_metrics_csv(&text)
}
