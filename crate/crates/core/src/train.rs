//! Optimizer, learning-rate schedule, loss/gradient dispatch and supervised
//! fine-tuning.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Dense, Model};
use crate::rng::{self, derive_seed};
use crate::ssl;
use crate::tensor::{CheckpointMeta, Role, TensorSet};

/// Linear warmup over `round(warmup_frac * total)` steps from 0 to `peak`,
/// then cosine decay reaching 0 at the last step.
pub fn lr_at(step: usize, total: usize, peak: f64, warmup_frac: f64) -> f64 {
    let warmup = libm::round(warmup_frac * total as f64) as usize;
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return peak;
    }
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    peak * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

/// Cosine decay from `start` to `end` over `total` steps (no warmup).
pub fn cosine_between(step: usize, total: usize, start: f64, end: f64) -> f64 {
    if total <= 1 {
        return start;
    }
    let progress = (step as f64 / (total - 1) as f64).min(1.0);
    end + (start - end) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

/// Adam with decoupled weight decay. State is keyed by slice position, so the
/// same parameter groups must be passed in the same order on every step.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient groups differ");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| alloc::vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / (libm::sqrt(v[i] / bc2) + self.eps);
                p[i] -= lr * (update + self.weight_decay * p[i]);
            }
        }
    }
}

/// Yields mini-batches of indices; each epoch is a fresh permutation drawn
/// from a stream derived from `(seed, epoch)`. Partial tail batches are
/// dropped unless the whole set is smaller than one batch.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    seed: u64,
    n: usize,
    batch: usize,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
}

impl EpochSampler {
    pub fn new(seed: u64, n: usize, batch: usize) -> Self {
        assert!(n > 0, "cannot sample batches from an empty set");
        let batch = batch.clamp(1, n);
        let mut s = Self { seed, n, batch, epoch: 0, pos: 0, order: Vec::new() };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut r = rng::stream(derive_seed(self.seed, "epoch", self.epoch));
        self.order = rng::permutation(&mut r, self.n);
        self.pos = 0;
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossId {
    CrossEntropy,
    MaskedRecon,
    InfoNce,
    DimContrastive,
}

impl LossId {
    pub fn as_str(self) -> &'static str {
        match self {
            LossId::CrossEntropy => "cross_entropy",
            LossId::MaskedRecon => "masked_recon",
            LossId::InfoNce => "infonce",
            LossId::DimContrastive => "dim_contrastive",
        }
    }
}

/// Two augmented views of the same samples, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub a: Matrix,
    pub b: Matrix,
}

/// A batch with all randomness (masks, augmentations) already drawn, so the
/// loss is a deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LossBatch {
    CrossEntropy {
        inputs: Matrix,
        labels: Vec<usize>,
    },
    /// `mask[i * d + j]` marks coordinate `j` of sample `i` as hidden.
    MaskedRecon {
        inputs: Matrix,
        mask: Vec<bool>,
    },
    InfoNce {
        views: ViewPair,
        temperature: f64,
    },
    DimContrastive {
        views: ViewPair,
        gamma: f64,
        local: Option<ViewPair>,
    },
}

impl LossBatch {
    pub fn id(&self) -> LossId {
        match self {
            LossBatch::CrossEntropy { .. } => LossId::CrossEntropy,
            LossBatch::MaskedRecon { .. } => LossId::MaskedRecon,
            LossBatch::InfoNce { .. } => LossId::InfoNce,
            LossBatch::DimContrastive { .. } => LossId::DimContrastive,
        }
    }
}

/// Loss value and its gradient with respect to every parameter of the model.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub grad: Model,
}

impl Gradient {
    /// Gradient laid out like the parameter set (rounded to f32).
    pub fn to_tensors(&self) -> TensorSet {
        self.grad.to_tensors()
    }
}

/// Analytic gradients of the batch loss for every parameter in `params`.
pub fn gradients(params: &TensorSet, batch: &LossBatch) -> Result<Gradient> {
    let model = Model::from_tensors(params)?;
    let (loss, grad) = loss_and_grad(&model, batch)?;
    Ok(Gradient { loss, grad })
}

pub fn loss_and_grad(model: &Model, batch: &LossBatch) -> Result<(f64, Model)> {
    let mut grad = model.zeros_like();
    let loss = match batch {
        LossBatch::CrossEntropy { inputs, labels } => {
            check_input(model, inputs)?;
            let head = model
                .classifier
                .as_ref()
                .ok_or_else(|| Error::shape(crate::model::CLASSIFIER, "classifier head missing"))?;
            if labels.len() != inputs.rows() {
                return Err(Error::LengthMismatch { left: inputs.rows(), right: labels.len() });
            }
            let cache = model.encoder.forward_cached(inputs);
            let logits = head.forward(cache.output());
            let (loss, dlogits) = cross_entropy(&logits, labels)?;
            let demb = head
                .backward(cache.output(), &dlogits, grad.classifier.as_mut().expect("mirrors model"), true)
                .expect("input gradient requested");
            model.encoder.backward(&cache, &demb, &mut grad.encoder, false);
            loss
        }
        LossBatch::MaskedRecon { inputs, mask } => ssl::masked_recon_grad(model, inputs, mask, &mut grad)?,
        LossBatch::InfoNce { views, temperature } => {
            ssl::pair_loss_grad(model, views, &mut grad, |a, b| ssl::infonce_from_projections(a, b, *temperature))?
        }
        LossBatch::DimContrastive { views, gamma, local } => {
            let mut total = ssl::pair_loss_grad(model, views, &mut grad, |a, b| {
                ssl::dim_contrastive_from_projections(a, b, *gamma)
            })?;
            if let Some(lv) = local {
                total += ssl::pair_loss_grad(model, lv, &mut grad, |a, b| {
                    ssl::dim_contrastive_from_projections(a, b, *gamma)
                })?;
            }
            total
        }
    };
    Ok((loss, grad))
}

pub(crate) fn check_input(model: &Model, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != model.input_dim() {
        return Err(Error::shape(
            "layer0.weight",
            format!("batch has {} columns, encoder expects {}", inputs.cols(), model.input_dim()),
        ));
    }
    Ok(())
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let b = logits.rows();
    let c = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::shape(crate::model::CLASSIFIER, format!("label {bad} but only {c} classes")));
    }
    let mut grad = Matrix::zeros(b, c);
    let mut loss = 0.0;
    let mut logp = alloc::vec![0.0; c];
    for i in 0..b {
        log_softmax_row(logits.row(i), &mut logp);
        loss -= logp[labels[i]];
        let g = grad.row_mut(i);
        for j in 0..c {
            g[j] = libm::exp(logp[j]) / b as f64;
        }
        g[labels[i]] -= 1.0 / b as f64;
    }
    Ok((loss / b as f64, grad))
}

/// Supervised fine-tuning recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Train the linear head on the frozen encoder first.
    pub lpft: bool,
    pub probe_steps: usize,
    pub probe_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 64,
            peak_lr: 1e-3,
            warmup_frac: 0.10,
            weight_decay: 0.01,
            seed: 0,
            lpft: true,
            probe_steps: 200,
            probe_lr: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) {
            return Err(Error::InvalidConfig("peak_lr must be positive".to_string()));
        }
        if !(0.0..=0.5).contains(&self.warmup_frac) {
            return Err(Error::InvalidConfig("warmup_frac must lie in [0, 0.5]".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".to_string()));
        }
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: TensorSet,
    pub meta: CheckpointMeta,
    /// Objective on the full training set before and after the run.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mini-batch loss of every optimizer step.
    pub losses: Vec<f64>,
}

/// Full-set cross-entropy of a model with a classifier head.
pub fn dataset_loss(model: &Model, data: &LabeledDataset) -> Result<f64> {
    let head =
        model.classifier.as_ref().ok_or_else(|| Error::shape(crate::model::CLASSIFIER, "classifier head missing"))?;
    let logits = head.forward(&model.embed(&data.inputs)?);
    Ok(cross_entropy(&logits, &data.labels)?.0)
}

/// Fine-tunes `stock` (plus a classifier head, zero-initialised when absent)
/// on labeled data. Decoder and projector heads are dropped first.
pub fn train_supervised(stock: &TensorSet, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut model = Model::from_tensors(stock)?;
    check_input(&model, &data.inputs)?;
    model.decoder = None;
    model.projector = None;
    match &model.classifier {
        Some(h) if h.fan_out != data.num_classes => {
            return Err(Error::shape(
                crate::model::CLASSIFIER,
                format!("head has {} outputs, data has {} classes", h.fan_out, data.num_classes),
            ));
        }
        Some(_) => {}
        None => model.classifier = Some(Dense::zeros(model.embed_dim(), data.num_classes)),
    }

    let initial_loss = dataset_loss(&model, data)?;
    let mut losses = Vec::with_capacity(cfg.steps + if cfg.lpft { cfg.probe_steps } else { 0 });

    if cfg.lpft && cfg.probe_steps > 0 {
        linear_probe(&mut model, data, cfg, &mut losses)?;
    }

    let mut opt = AdamW::new(cfg.weight_decay);
    let mut sampler = EpochSampler::new(derive_seed(cfg.seed, "finetune", 0), data.len(), cfg.batch_size);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch();
        let batch = LossBatch::CrossEntropy {
            inputs: data.inputs.gather(&idx),
            labels: idx.iter().map(|&i| data.labels[i]).collect(),
        };
        let (loss, grad) = loss_and_grad(&model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        losses.push(loss);
        let lr = lr_at(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac);
        opt.step(model.slices_mut(), grad.slices(), lr);
    }

    let final_loss = dataset_loss(&model, data)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { step: cfg.steps });
    }
    let params = model.to_tensors();
    let meta = CheckpointMeta::new(Role::FineTuned, cfg.seed)
        .with_parent(stock.fingerprint())
        .with_param("steps", cfg.steps)
        .with_param("batch_size", cfg.batch_size)
        .with_param("peak_lr", cfg.peak_lr)
        .with_param("warmup_frac", cfg.warmup_frac)
        .with_param("weight_decay", cfg.weight_decay)
        .with_param("lpft", cfg.lpft);
    Ok(TrainOutcome { params, meta, initial_loss, final_loss, losses })
}

/// Head-only training on frozen embeddings.
fn linear_probe(model: &mut Model, data: &LabeledDataset, cfg: &TrainConfig, losses: &mut Vec<f64>) -> Result<()> {
    let emb = model.embed(&data.inputs)?;
    let head = model.classifier.as_mut().expect("head installed before probing");
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut sampler = EpochSampler::new(derive_seed(cfg.seed, "probe", 0), data.len(), cfg.batch_size);
    for step in 0..cfg.probe_steps {
        let idx = sampler.next_batch();
        let x = emb.gather(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let (loss, dlogits) = cross_entropy(&head.forward(&x), &labels)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        losses.push(loss);
        let mut g = Dense::zeros(head.fan_in, head.fan_out);
        head.backward(&x, &dlogits, &mut g, false);
        let lr = lr_at(step, cfg.probe_steps, cfg.probe_lr, cfg.warmup_frac);
        opt.step(alloc::vec![&mut head.weight[..], &mut head.bias[..]], alloc::vec![&g.weight[..], &g.bias[..]], lr);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn schedule_shape() {
        let total = 100;
        assert_eq!(lr_at(0, total, 1.0, 0.1), 0.0);
        assert_eq!(lr_at(10, total, 1.0, 0.1), 1.0);
        assert!(lr_at(99, total, 1.0, 0.1) <= 0.01);
        assert!((lr_at(5, total, 1.0, 0.1) - 0.5).abs() < 1e-12);
        assert_eq!(lr_at(0, total, 2.0, 0.0), 2.0);
    }

    #[test]
    fn cosine_between_endpoints() {
        assert!((cosine_between(0, 50, 0.1, 0.01) - 0.1).abs() < 1e-15);
        assert!((cosine_between(49, 50, 0.1, 0.01) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sampler_covers_epoch() {
        let mut s = EpochSampler::new(1, 10, 5);
        let mut seen: Vec<usize> = s.next_batch();
        seen.extend(s.next_batch());
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(s.epoch(), 0);
        s.next_batch();
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn sampler_uses_whole_set_when_small() {
        let mut s = EpochSampler::new(1, 3, 8);
        assert_eq!(s.next_batch().len(), 3);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Matrix::zeros(2, 4);
        let (loss, _) = cross_entropy(&logits, &[0, 3]).unwrap();
        assert!((loss - libm::log(4.0)).abs() < 1e-12);
        assert!(cross_entropy(&logits, &[4, 0]).is_err());
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut p = [1.0, -1.0];
        let g = [0.5, -2.0];
        let mut opt = AdamW::new(0.0);
        opt.step(vec![&mut p[..]], vec![&g[..]], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { peak_lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { warmup_frac: 0.6, ..TrainConfig::default() }.validate().is_err());
    }
}
