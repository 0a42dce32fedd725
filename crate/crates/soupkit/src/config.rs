//! Declarative experiment recipes, read from JSON.
//!
//! Optional numeric fields fall back to the defaults of the matching core
//! config type, so those defaults live in one place.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use soupkit_core::data::{CorruptionKind, PatternSpec, Split};
use soupkit_core::eval::{KnnConfig, Voting};
use soupkit_core::soup::{LogitOptimizer, SelfSeasonConfig};
use soupkit_core::ssl::{SslAlgorithm, SslConfig};
use soupkit_core::train::TrainConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub task: TaskSpec,
    pub datasets: BTreeMap<String, DatasetSpec>,
    pub stock: StockSpec,
    #[serde(default)]
    pub inter_trainings: Vec<SslSpec>,
    #[serde(default)]
    pub fine_tunings: Vec<FineTuneSpec>,
    /// Put the stock itself in front of the trained ingredients.
    #[serde(default)]
    pub include_stock: bool,
    pub mix: MixSpec,
    pub eval: EvalSpec,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

fn default_workers() -> usize {
    1
}

/// The pattern task shared by every generated dataset of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub classes: usize,
    pub side: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_shift: Option<usize>,
}

impl TaskSpec {
    pub fn pattern_spec(&self, template_seed: u64) -> PatternSpec {
        let base = PatternSpec::new(self.classes, self.side, template_seed);
        PatternSpec {
            noise: self.noise.unwrap_or(base.noise),
            max_shift: self.max_shift.unwrap_or(base.max_shift),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Generate {
        n: usize,
        #[serde(default = "default_split")]
        split: String,
    },
    Corrupt {
        from: String,
        kind: String,
        severity: u8,
    },
    /// Even-indexed samples of another dataset.
    Even(String),
    /// Odd-indexed samples of another dataset.
    Odd(String),
    /// The first `per_class` samples of every class.
    FewShot {
        from: String,
        per_class: usize,
    },
    File(PathBuf),
}

fn default_split() -> String {
    "train".into()
}

impl DatasetSpec {
    fn parent(&self) -> Option<&str> {
        match self {
            DatasetSpec::Corrupt { from, .. } | DatasetSpec::FewShot { from, .. } => Some(from),
            DatasetSpec::Even(from) | DatasetSpec::Odd(from) => Some(from),
            DatasetSpec::Generate { .. } | DatasetSpec::File(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StockSpec {
    Init {
        #[serde(default = "default_hidden")]
        hidden_dims: Vec<usize>,
        #[serde(default = "default_embed")]
        embed_dim: usize,
        /// Self-supervised pretraining applied to the fresh encoder.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pretrain: Option<Box<SslSpec>>,
    },
    Path(PathBuf),
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_embed() -> usize {
    32
}

/// One self-supervised training job.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslSpec {
    pub algorithm: String,
    pub data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aug_noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aug_mask_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_views: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector_hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector_dim: Option<usize>,
}

impl SslSpec {
    pub fn algorithm(&self) -> Result<SslAlgorithm> {
        SslAlgorithm::parse(&self.algorithm)
            .ok_or_else(|| Error::Config(format!("unknown SSL algorithm `{}`", self.algorithm)))
    }

    pub fn to_core(&self, seed: u64) -> Result<SslConfig> {
        let d = SslConfig::new(self.algorithm()?);
        let cfg = SslConfig {
            steps: self.steps.unwrap_or(d.steps),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            peak_lr: self.peak_lr.unwrap_or(d.peak_lr),
            warmup_frac: self.warmup_frac.unwrap_or(d.warmup_frac),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            mask_ratio: self.mask_ratio.unwrap_or(d.mask_ratio),
            temperature: self.temperature.unwrap_or(d.temperature),
            aug_noise_sigma: self.aug_noise_sigma.or(d.aug_noise_sigma),
            aug_mask_frac: self.aug_mask_frac.unwrap_or(d.aug_mask_frac),
            variance_target: self.variance_target.unwrap_or(d.variance_target),
            local_views: self.local_views.unwrap_or(d.local_views),
            projector_hidden: self.projector_hidden.unwrap_or(d.projector_hidden),
            projector_dim: self.projector_dim.unwrap_or(d.projector_dim),
            seed,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One supervised fine-tuning recipe, applied to every inter-trained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneSpec {
    pub data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpft: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_lr: Option<f64>,
}

impl FineTuneSpec {
    pub fn to_core(&self, seed: u64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            steps: self.steps.unwrap_or(d.steps),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            peak_lr: self.peak_lr.unwrap_or(d.peak_lr),
            warmup_frac: self.warmup_frac.unwrap_or(d.warmup_frac),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            lpft: self.lpft.unwrap_or(d.lpft),
            probe_steps: self.probe_steps.unwrap_or(d.probe_steps),
            probe_lr: self.probe_lr.unwrap_or(d.probe_lr),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    HeadAccuracy,
    KnnAccuracy,
    KnnEntropy,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::HeadAccuracy => "head_accuracy",
            Metric::KnnAccuracy => "knn_accuracy",
            Metric::KnnEntropy => "knn_entropy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Metric::HeadAccuracy, Metric::KnnAccuracy, Metric::KnnEntropy].into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnSpec {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub majority: bool,
}

fn default_k() -> usize {
    KnnConfig::default().k
}

fn default_temperature() -> f64 {
    KnnConfig::default().temperature
}

impl Default for KnnSpec {
    fn default() -> Self {
        Self { k: default_k(), temperature: default_temperature(), majority: false }
    }
}

impl KnnSpec {
    pub fn to_core(&self) -> Result<KnnConfig> {
        let voting = if self.majority { Voting::Majority } else { Voting::Weighted };
        let cfg = KnnConfig { k: self.k, temperature: self.temperature, voting };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeasonScore {
    /// Leave-one-out kNN accuracy on the few-shot set.
    Knn,
    /// Classifier-head accuracy on the few-shot set.
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixSpec {
    Uniform,
    Greedy {
        select_on: String,
        metric: Metric,
    },
    Season {
        few_shot: String,
        #[serde(default = "default_trials")]
        trials: usize,
        #[serde(default = "default_score")]
        score: SeasonScore,
    },
    SelfSeason {
        data: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epochs: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lr_start: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lr_end: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch_size: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fd_step: Option<f64>,
        #[serde(default)]
        adamw: bool,
    },
    Simplex {
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
    PairSweep {
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "default_pair")]
        pair: [usize; 2],
    },
}

fn default_trials() -> usize {
    1000
}

fn default_score() -> SeasonScore {
    SeasonScore::Knn
}

fn default_resolution() -> usize {
    7
}

fn default_points() -> usize {
    11
}

fn default_pair() -> [usize; 2] {
    [0, 1]
}

impl MixSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MixSpec::Uniform => "uniform",
            MixSpec::Greedy { .. } => "greedy",
            MixSpec::Season { .. } => "season",
            MixSpec::SelfSeason { .. } => "self_season",
            MixSpec::Simplex { .. } => "simplex",
            MixSpec::PairSweep { .. } => "pair_sweep",
        }
    }

    /// Self-seasoning settings; `None` for other methods.
    pub fn self_season_config(&self, knn: KnnConfig, seed: u64) -> Option<SelfSeasonConfig> {
        let MixSpec::SelfSeason { epochs, lr_start, lr_end, batch_size, fd_step, adamw, .. } = self else {
            return None;
        };
        let d = SelfSeasonConfig::default();
        Some(SelfSeasonConfig {
            epochs: epochs.unwrap_or(d.epochs),
            lr_start: lr_start.unwrap_or(d.lr_start),
            lr_end: lr_end.unwrap_or(d.lr_end),
            batch_size: batch_size.unwrap_or(d.batch_size),
            fd_step: fd_step.unwrap_or(d.fd_step),
            optimizer: if *adamw { LogitOptimizer::AdamW } else { LogitOptimizer::Sgd },
            knn,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub splits: Vec<String>,
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub knn: KnnSpec,
    /// Labeled dataset whose embeddings vote in kNN accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn_refs: Option<String>,
}

impl ExperimentConfig {
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON config and applies `key.path=value` overrides first.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    /// Number of mixing ingredients the run produces.
    pub fn num_ingredients(&self) -> usize {
        let (m, n) = (self.inter_trainings.len(), self.fine_tunings.len());
        let trained = match (m, n) {
            (0, n) => n,
            (m, 0) => m,
            (m, n) => m * n,
        };
        trained + usize::from(self.include_stock)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        self.task.pattern_spec(0).templates()?;
        self.check_datasets()?;
        let known = |name: &str, what: &str| -> Result<()> {
            if self.datasets.contains_key(name) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} refers to unknown dataset `{name}`")))
            }
        };
        if let StockSpec::Init { pretrain: Some(p), .. } = &self.stock {
            known(&p.data, "stock pretraining")?;
            p.to_core(0)?;
        }
        for (i, s) in self.inter_trainings.iter().enumerate() {
            known(&s.data, &format!("inter-training {i}"))?;
            s.to_core(0)?;
        }
        for (j, f) in self.fine_tunings.iter().enumerate() {
            known(&f.data, &format!("fine-tuning {j}"))?;
            f.to_core(0)?;
        }
        let m = self.num_ingredients();
        if m == 0 {
            return bad("the run produces no ingredients".into());
        }
        match &self.mix {
            MixSpec::Simplex { resolution } => {
                if m != 3 {
                    return bad(format!("simplex mixing needs 3 ingredients, the run produces {m}"));
                }
                if *resolution == 0 {
                    return bad("simplex resolution must be at least 1".into());
                }
            }
            MixSpec::PairSweep { points, pair } => {
                if *points < 2 || pair[0] >= m || pair[1] >= m || pair[0] == pair[1] {
                    return bad(format!("pair sweep needs 2+ points and two distinct ingredients below {m}"));
                }
            }
            MixSpec::Greedy { select_on, .. } => known(select_on, "greedy selection")?,
            MixSpec::Season { few_shot, trials, .. } => {
                known(few_shot, "seasoning")?;
                if *trials == 0 {
                    return bad("seasoning needs at least 1 trial".into());
                }
            }
            MixSpec::SelfSeason { data, .. } => {
                known(data, "self-seasoning")?;
                if m < 2 {
                    return bad("self-seasoning needs at least 2 ingredients".into());
                }
                self.mix.self_season_config(self.eval.knn.to_core()?, 0).expect("self-season spec").validate()?;
            }
            MixSpec::Uniform => {}
        }
        if self.eval.splits.is_empty() || self.eval.metrics.is_empty() {
            return bad("eval needs at least one split and one metric".into());
        }
        for s in &self.eval.splits {
            known(s, "eval")?;
        }
        self.eval.knn.to_core()?;
        match &self.eval.knn_refs {
            Some(r) => known(r, "knn_refs")?,
            None if self.eval.metrics.contains(&Metric::KnnAccuracy) => {
                return bad("knn_accuracy needs `knn_refs`".into());
            }
            None => {}
        }
        if matches!(&self.mix, MixSpec::Greedy { metric: Metric::KnnAccuracy, .. }) && self.eval.knn_refs.is_none() {
            return bad("greedy selection by knn_accuracy needs `knn_refs`".into());
        }
        Ok(())
    }

    fn check_datasets(&self) -> Result<()> {
        for (name, spec) in &self.datasets {
            match spec {
                DatasetSpec::Generate { n, split } => {
                    if *n == 0 {
                        return Err(Error::Config(format!("dataset `{name}` is empty")));
                    }
                    Split::parse(split)
                        .ok_or_else(|| Error::Config(format!("dataset `{name}`: unknown split `{split}`")))?;
                }
                DatasetSpec::Corrupt { kind, severity, .. } => {
                    let k = CorruptionKind::parse(kind)
                        .ok_or_else(|| Error::Config(format!("dataset `{name}`: unknown corruption `{kind}`")))?;
                    if *severity > 0 {
                        k.parameter(*severity)?;
                    }
                }
                _ => {}
            }
            // Follow the parent chain to catch dangling references and cycles.
            let mut seen = BTreeSet::from([name.as_str()]);
            let mut cur = spec;
            while let Some(parent) = cur.parent() {
                cur = self
                    .datasets
                    .get(parent)
                    .ok_or_else(|| Error::Config(format!("dataset `{name}` derives from unknown `{parent}`")))?;
                if !seen.insert(parent) {
                    return Err(Error::Config(format!("dataset `{name}` derives from itself")));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring where and how wide the run executes.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
            obj.remove("workers");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sets `a.b.0.c=value` inside a JSON document. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) =
        assignment.split_once('=').ok_or_else(|| Error::Config(format!("override `{assignment}` lacks `=`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (depth, key) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        cur = match cur {
            Value::Array(items) => {
                let i: usize =
                    key.parse().map_err(|_| Error::Config(format!("`{key}` in `{path}` is not an index")))?;
                items.get_mut(i).ok_or_else(|| Error::Config(format!("index {i} in `{path}` out of range")))?
            }
            Value::Object(map) => {
                if last {
                    map.insert((*key).to_string(), value);
                    return Ok(());
                }
                map.entry((*key).to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(Error::Config(format!("`{path}` descends into a scalar"))),
        };
        if last {
            *cur = value;
            return Ok(());
        }
    }
    Err(Error::Config("empty override path".into()))
}
