//! Self-supervised objectives (masked reconstruction, InfoNCE, and a
//! variance/invariance/covariance dimension-contrastive loss) and the
//! label-free inter-training loop.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::RngCore;

use crate::data::UnlabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::{Dense, Mlp, Model, DECODER, PROJECTOR};
use crate::rng::{self, derive_seed};
use crate::tensor::{CheckpointMeta, Role, TensorSet};
use crate::train::{check_input, loss_and_grad, lr_at, AdamW, EpochSampler, LossBatch, TrainOutcome, ViewPair};

/// Coefficients of the dimension-contrastive loss.
pub const INVARIANCE_COEF: f64 = 25.0;
pub const VARIANCE_COEF: f64 = 25.0;
pub const COVARIANCE_COEF: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SslAlgorithm {
    MaskedRecon,
    InfoNce,
    DimContrastive,
}

impl SslAlgorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            SslAlgorithm::MaskedRecon => "masked_recon",
            SslAlgorithm::InfoNce => "infonce",
            SslAlgorithm::DimContrastive => "dim_contrastive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "masked_recon" => SslAlgorithm::MaskedRecon,
            "infonce" => SslAlgorithm::InfoNce,
            "dim_contrastive" => SslAlgorithm::DimContrastive,
            _ => return None,
        })
    }
}

/// Positive-pair augmentation: additive Gaussian noise, then zeroing a random
/// fraction of coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    pub noise_sigma: f64,
    pub mask_frac: f64,
}

impl Augment {
    pub fn view<R: RngCore + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Matrix {
        let d = x.cols();
        let hidden = libm::floor(self.mask_frac * d as f64) as usize;
        let mut out = x.clone();
        for i in 0..x.rows() {
            let row = out.row_mut(i);
            if self.noise_sigma > 0.0 {
                for v in row.iter_mut() {
                    *v += self.noise_sigma * rng::normal(rng);
                }
            }
            for j in rng::choose_distinct(rng, d, hidden) {
                row[j] = 0.0;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslConfig {
    pub algorithm: SslAlgorithm,
    pub mask_ratio: f64,
    pub temperature: f64,
    /// `None` means 0.1 times the standard deviation of the training inputs.
    pub aug_noise_sigma: Option<f64>,
    pub aug_mask_frac: f64,
    pub variance_target: f64,
    /// Adds the dimension-contrastive loss on random half-coordinate "local" views.
    pub local_views: bool,
    pub projector_hidden: usize,
    pub projector_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl SslConfig {
    pub fn new(algorithm: SslAlgorithm) -> Self {
        Self {
            algorithm,
            mask_ratio: 0.75,
            temperature: 0.1,
            aug_noise_sigma: None,
            aug_mask_frac: 0.25,
            variance_target: 1.0,
            local_views: false,
            projector_hidden: 64,
            projector_dim: 32,
            steps: 1000,
            batch_size: 64,
            peak_lr: 1e-3,
            warmup_frac: 0.10,
            weight_decay: 0.01,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio must lie in (0, 1)");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(0.0..1.0).contains(&self.aug_mask_frac) {
            return bad("aug_mask_frac must lie in [0, 1)");
        }
        if !(self.peak_lr > 0.0) {
            return bad("peak_lr must be positive");
        }
        if !(0.0..=0.5).contains(&self.warmup_frac) {
            return bad("warmup_frac must lie in [0, 0.5]");
        }
        if self.batch_size == 0 || self.projector_hidden == 0 || self.projector_dim == 0 {
            return bad("batch and projector sizes must be positive");
        }
        Ok(())
    }
}

/// Hides `floor(ratio * d)` uniformly chosen coordinates of every sample.
pub fn sample_mask<R: RngCore + ?Sized>(rows: usize, d: usize, ratio: f64, rng: &mut R) -> Vec<bool> {
    let hidden = libm::floor(ratio * d as f64) as usize;
    let mut mask = alloc::vec![false; rows * d];
    for i in 0..rows {
        for j in rng::choose_distinct(rng, d, hidden) {
            mask[i * d + j] = true;
        }
    }
    mask
}

/// Keeps a random half of the coordinates of every row of both views.
fn local_pair<R: RngCore + ?Sized>(views: &ViewPair, rng: &mut R) -> ViewPair {
    let d = views.a.cols();
    let mut crop = |m: &Matrix| {
        let mut out = m.clone();
        for i in 0..m.rows() {
            let row = out.row_mut(i);
            for j in rng::choose_distinct(rng, d, d - d / 2) {
                row[j] = 0.0;
            }
        }
        out
    };
    ViewPair { a: crop(&views.a), b: crop(&views.b) }
}

/// Draws the randomness of one training batch.
pub fn sample_batch<R: RngCore + ?Sized>(cfg: &SslConfig, inputs: &Matrix, aug: &Augment, rng: &mut R) -> LossBatch {
    match cfg.algorithm {
        SslAlgorithm::MaskedRecon => LossBatch::MaskedRecon {
            inputs: inputs.clone(),
            mask: sample_mask(inputs.rows(), inputs.cols(), cfg.mask_ratio, rng),
        },
        SslAlgorithm::InfoNce => LossBatch::InfoNce {
            views: ViewPair { a: aug.view(inputs, rng), b: aug.view(inputs, rng) },
            temperature: cfg.temperature,
        },
        SslAlgorithm::DimContrastive => {
            let views = ViewPair { a: aug.view(inputs, rng), b: aug.view(inputs, rng) };
            let local = cfg.local_views.then(|| local_pair(&views, rng));
            LossBatch::DimContrastive { views, gamma: cfg.variance_target, local }
        }
    }
}

fn batch_loss(params: &TensorSet, batch: &LossBatch) -> Result<f64> {
    let model = Model::from_tensors(params)?;
    Ok(loss_and_grad(&model, batch)?.0)
}

/// Mean squared reconstruction error on a random `ratio` fraction of masked
/// coordinates. An empty mask gives 0.
pub fn masked_recon_loss<R: RngCore + ?Sized>(
    params: &TensorSet,
    batch: &Matrix,
    ratio: f64,
    rng: &mut R,
) -> Result<f64> {
    let mask = sample_mask(batch.rows(), batch.cols(), ratio, rng);
    batch_loss(params, &LossBatch::MaskedRecon { inputs: batch.clone(), mask })
}

pub fn infonce_loss<R: RngCore + ?Sized>(
    params: &TensorSet,
    batch: &Matrix,
    temperature: f64,
    aug: &Augment,
    rng: &mut R,
) -> Result<f64> {
    let views = ViewPair { a: aug.view(batch, rng), b: aug.view(batch, rng) };
    batch_loss(params, &LossBatch::InfoNce { views, temperature })
}

pub fn dim_contrastive_loss<R: RngCore + ?Sized>(
    params: &TensorSet,
    batch: &Matrix,
    gamma: f64,
    aug: &Augment,
    local_views: bool,
    rng: &mut R,
) -> Result<f64> {
    let views = ViewPair { a: aug.view(batch, rng), b: aug.view(batch, rng) };
    let local = local_views.then(|| local_pair(&views, rng));
    batch_loss(params, &LossBatch::DimContrastive { views, gamma, local })
}

pub(crate) fn masked_recon_grad(model: &Model, inputs: &Matrix, mask: &[bool], grad: &mut Model) -> Result<f64> {
    check_input(model, inputs)?;
    let decoder = model.decoder.as_ref().ok_or_else(|| Error::shape(DECODER, "decoder head missing"))?;
    if mask.len() != inputs.rows() * inputs.cols() {
        return Err(Error::LengthMismatch { left: inputs.rows() * inputs.cols(), right: mask.len() });
    }
    let hidden = mask.iter().filter(|&&m| m).count();
    if hidden == 0 {
        return Ok(0.0);
    }
    let mut masked = inputs.clone();
    for (v, &m) in masked.data_mut().iter_mut().zip(mask) {
        if m {
            *v = 0.0;
        }
    }
    let cache = model.encoder.forward_cached(&masked);
    let recon = decoder.forward(cache.output());
    let scale = 1.0 / hidden as f64;
    let mut loss = 0.0;
    let mut drecon = Matrix::zeros(recon.rows(), recon.cols());
    for (k, &m) in mask.iter().enumerate() {
        if m {
            let diff = recon.data()[k] - inputs.data()[k];
            loss += diff * diff * scale;
            drecon.data_mut()[k] = 2.0 * diff * scale;
        }
    }
    let demb = decoder
        .backward(cache.output(), &drecon, grad.decoder.as_mut().expect("mirrors model"), true)
        .expect("input gradient requested");
    model.encoder.backward(&cache, &demb, &mut grad.encoder, false);
    Ok(loss)
}

/// Encodes and projects both views, applies `f` to the projections and
/// backpropagates its gradients. Parameter gradients accumulate into `grad`.
pub(crate) fn pair_loss_grad(
    model: &Model,
    views: &ViewPair,
    grad: &mut Model,
    f: impl Fn(&Matrix, &Matrix) -> Result<(f64, Matrix, Matrix)>,
) -> Result<f64> {
    check_input(model, &views.a)?;
    check_input(model, &views.b)?;
    let proj = model.projector.as_ref().ok_or_else(|| Error::shape(PROJECTOR, "projection head missing"))?;
    let enc_a = model.encoder.forward_cached(&views.a);
    let enc_b = model.encoder.forward_cached(&views.b);
    let proj_a = proj.forward_cached(enc_a.output());
    let proj_b = proj.forward_cached(enc_b.output());
    let (loss, da, db) = f(proj_a.output(), proj_b.output())?;
    let gp = grad.projector.as_mut().expect("mirrors model");
    let demb_a = proj.backward(&proj_a, &da, gp, true).expect("input gradient requested");
    let demb_b = proj.backward(&proj_b, &db, gp, true).expect("input gradient requested");
    model.encoder.backward(&enc_a, &demb_a, &mut grad.encoder, false);
    model.encoder.backward(&enc_b, &demb_b, &mut grad.encoder, false);
    Ok(loss)
}

fn normalize_rows(p: &Matrix) -> (Matrix, Vec<f64>) {
    let mut n = p.clone();
    let mut norms = Vec::with_capacity(p.rows());
    for i in 0..p.rows() {
        let row = n.row_mut(i);
        let r = libm::sqrt(dot(row, row)).max(1e-12);
        row.iter_mut().for_each(|v| *v /= r);
        norms.push(r);
    }
    (n, norms)
}

fn normalize_backward(n: &Matrix, norms: &[f64], dn: &Matrix) -> Matrix {
    let mut dp = dn.clone();
    for i in 0..n.rows() {
        let ni = n.row(i);
        let proj = dot(ni, dn.row(i));
        let r = norms[i];
        for (d, &nv) in dp.row_mut(i).iter_mut().zip(ni) {
            *d = (*d - nv * proj) / r;
        }
    }
    dp
}

/// Symmetric InfoNCE on projections `a`, `b` (row `i` of each is a positive
/// pair): mean of the row-wise and column-wise cross-entropies of the cosine
/// similarity matrix divided by `temperature`. Returns the loss and its
/// gradients with respect to `a` and `b`.
pub fn infonce_from_projections(a: &Matrix, b: &Matrix, temperature: f64) -> Result<(f64, Matrix, Matrix)> {
    let bsz = a.rows();
    if bsz < 2 {
        return Err(Error::BatchTooSmall { got: bsz, need: 2 });
    }
    if b.rows() != bsz || b.cols() != a.cols() {
        return Err(Error::LengthMismatch { left: bsz, right: b.rows() });
    }
    let (na, ra) = normalize_rows(a);
    let (nb, rb) = normalize_rows(b);
    let mut s = Matrix::zeros(bsz, bsz);
    for i in 0..bsz {
        for j in 0..bsz {
            s.data_mut()[i * bsz + j] = dot(na.row(i), nb.row(j)) / temperature;
        }
    }
    let mut ds = Matrix::zeros(bsz, bsz);
    let half = 0.5 / bsz as f64;
    let mut loss = 0.0;
    // rows: sample i of view a picks its partner among view b
    for i in 0..bsz {
        let row = s.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
        loss += (max + libm::log(z) - row[i]) * half;
        for j in 0..bsz {
            ds.data_mut()[i * bsz + j] += libm::exp(row[j] - max) / z * half;
        }
        ds.data_mut()[i * bsz + i] -= half;
    }
    // columns: sample j of view b picks its partner among view a
    for j in 0..bsz {
        let max = (0..bsz).map(|i| s.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..bsz).map(|i| libm::exp(s.get(i, j) - max)).sum();
        loss += (max + libm::log(z) - s.get(j, j)) * half;
        for i in 0..bsz {
            ds.data_mut()[i * bsz + j] += libm::exp(s.get(i, j) - max) / z * half;
        }
        ds.data_mut()[j * bsz + j] -= half;
    }
    let d = a.cols();
    let mut dna = Matrix::zeros(bsz, d);
    let mut dnb = Matrix::zeros(bsz, d);
    for i in 0..bsz {
        for j in 0..bsz {
            let g = ds.get(i, j) / temperature;
            for k in 0..d {
                dna.data_mut()[i * d + k] += g * nb.get(j, k);
                dnb.data_mut()[j * d + k] += g * na.get(i, k);
            }
        }
    }
    Ok((loss, normalize_backward(&na, &ra, &dna), normalize_backward(&nb, &rb, &dnb)))
}

/// The three terms of the dimension-contrastive loss, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimContrastiveTerms {
    pub invariance: f64,
    pub variance: f64,
    pub covariance: f64,
}

impl DimContrastiveTerms {
    pub fn total(&self) -> f64 {
        INVARIANCE_COEF * self.invariance + VARIANCE_COEF * self.variance + COVARIANCE_COEF * self.covariance
    }
}

/// Variance and covariance penalties of one view and their gradient.
fn spread_terms(x: &Matrix, gamma: f64) -> (f64, f64, Matrix, Matrix) {
    let (bsz, d) = (x.rows(), x.cols());
    let denom = (bsz - 1) as f64;
    let mut xc = x.clone();
    for k in 0..d {
        let mean = (0..bsz).map(|i| x.get(i, k)).sum::<f64>() / bsz as f64;
        for i in 0..bsz {
            xc.data_mut()[i * d + k] -= mean;
        }
    }
    let mut var_term = 0.0;
    let mut dvar = Matrix::zeros(bsz, d);
    for k in 0..d {
        let var = (0..bsz).map(|i| xc.get(i, k) * xc.get(i, k)).sum::<f64>() / denom;
        let std = libm::sqrt(var);
        if std < gamma {
            var_term += gamma - std;
            if std > 0.0 {
                for i in 0..bsz {
                    dvar.data_mut()[i * d + k] = -xc.get(i, k) / (denom * std);
                }
            }
        }
    }
    let mut cov = alloc::vec![0.0; d * d];
    for p in 0..d {
        for q in 0..d {
            cov[p * d + q] = (0..bsz).map(|i| xc.get(i, p) * xc.get(i, q)).sum::<f64>() / denom;
        }
    }
    let mut cov_term = 0.0;
    for p in 0..d {
        for q in 0..d {
            if p != q {
                cov_term += cov[p * d + q] * cov[p * d + q];
            }
        }
    }
    cov_term /= d as f64;
    let mut dcov = Matrix::zeros(bsz, d);
    let scale = 4.0 / (denom * d as f64);
    for i in 0..bsz {
        for p in 0..d {
            let mut acc = 0.0;
            for q in 0..d {
                if q != p {
                    acc += cov[p * d + q] * xc.get(i, q);
                }
            }
            dcov.data_mut()[i * d + p] = scale * acc;
        }
    }
    (var_term, cov_term, dvar, dcov)
}

pub fn dim_contrastive_terms(a: &Matrix, b: &Matrix, gamma: f64) -> Result<DimContrastiveTerms> {
    Ok(dim_contrastive_impl(a, b, gamma)?.0)
}

fn dim_contrastive_impl(a: &Matrix, b: &Matrix, gamma: f64) -> Result<(DimContrastiveTerms, Matrix, Matrix)> {
    let (bsz, d) = (a.rows(), a.cols());
    if bsz < 2 {
        return Err(Error::BatchTooSmall { got: bsz, need: 2 });
    }
    if b.rows() != bsz || b.cols() != d {
        return Err(Error::LengthMismatch { left: bsz, right: b.rows() });
    }
    let n = (bsz * d) as f64;
    let invariance = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    let (va, ca, dva, dca) = spread_terms(a, gamma);
    let (vb, cb, dvb, dcb) = spread_terms(b, gamma);
    let terms = DimContrastiveTerms { invariance, variance: 0.5 * (va + vb), covariance: 0.5 * (ca + cb) };
    let mut da = Matrix::zeros(bsz, d);
    let mut db = Matrix::zeros(bsz, d);
    for k in 0..bsz * d {
        let diff = 2.0 * (a.data()[k] - b.data()[k]) / n * INVARIANCE_COEF;
        da.data_mut()[k] = diff + 0.5 * (VARIANCE_COEF * dva.data()[k] + COVARIANCE_COEF * dca.data()[k]);
        db.data_mut()[k] = -diff + 0.5 * (VARIANCE_COEF * dvb.data()[k] + COVARIANCE_COEF * dcb.data()[k]);
    }
    Ok((terms, da, db))
}

/// `25 * invariance + 25 * variance + covariance`; variance and covariance
/// are averaged over the two views. Per-dimension std uses the unbiased
/// variance without an epsilon (its gradient is taken as 0 at std = 0).
pub fn dim_contrastive_from_projections(a: &Matrix, b: &Matrix, gamma: f64) -> Result<(f64, Matrix, Matrix)> {
    let (terms, da, db) = dim_contrastive_impl(a, b, gamma)?;
    Ok((terms.total(), da, db))
}

fn input_std(m: &Matrix) -> f64 {
    let n = m.data().len().max(1) as f64;
    let mean = m.data().iter().sum::<f64>() / n;
    libm::sqrt(m.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// Augmentation used by `cfg` on `data`.
pub fn augment_for(cfg: &SslConfig, data: &Matrix) -> Augment {
    Augment { noise_sigma: cfg.aug_noise_sigma.unwrap_or_else(|| 0.1 * input_std(data)), mask_frac: cfg.aug_mask_frac }
}

/// Installs the algorithm-specific head on an encoder-only model.
pub fn attach_head(model: &mut Model, cfg: &SslConfig) {
    let mut r = rng::stream(derive_seed(cfg.seed, "head", 0));
    let d = model.embed_dim();
    match cfg.algorithm {
        SslAlgorithm::MaskedRecon => model.decoder = Some(Dense::init(d, model.input_dim(), &mut r)),
        SslAlgorithm::InfoNce | SslAlgorithm::DimContrastive => {
            model.projector =
                Some(Mlp::init(&[(d, cfg.projector_hidden), (cfg.projector_hidden, cfg.projector_dim)], &mut r));
        }
    }
}

/// Rows used to measure the objective before and after a run.
const PROBE_ROWS: usize = 256;

/// Self-supervised training from `stock`. The algorithm head is trained and
/// then dropped: the result holds the encoder tensors only.
pub fn inter_train(stock: &TensorSet, data: &UnlabeledDataset, cfg: &SslConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut model = Model::from_tensors(stock)?;
    check_input(&model, &data.inputs)?;
    model.classifier = None;
    model.decoder = None;
    model.projector = None;
    attach_head(&mut model, cfg);
    let needs_pairs = cfg.algorithm != SslAlgorithm::MaskedRecon;
    if needs_pairs && data.len().min(cfg.batch_size) < 2 {
        return Err(Error::BatchTooSmall { got: data.len().min(cfg.batch_size), need: 2 });
    }

    let aug = augment_for(cfg, &data.inputs);
    let probe_idx: Vec<usize> = (0..data.len().min(PROBE_ROWS)).collect();
    let probe = sample_batch(
        cfg,
        &data.inputs.gather(&probe_idx),
        &aug,
        &mut rng::stream(derive_seed(cfg.seed, "probe_batch", 0)),
    );
    let initial_loss = loss_and_grad(&model, &probe)?.0;

    let mut opt = AdamW::new(cfg.weight_decay);
    let mut sampler = EpochSampler::new(derive_seed(cfg.seed, "inter_train", 0), data.len(), cfg.batch_size);
    let mut aug_rng = rng::stream(derive_seed(cfg.seed, "augment", 0));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch();
        let batch = sample_batch(cfg, &data.inputs.gather(&idx), &aug, &mut aug_rng);
        let (loss, grad) = loss_and_grad(&model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        losses.push(loss);
        let lr = lr_at(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac);
        opt.step(model.slices_mut(), grad.slices(), lr);
    }
    let final_loss = loss_and_grad(&model, &probe)?.0;
    if !final_loss.is_finite() {
        return Err(Error::Diverged { step: cfg.steps });
    }

    let encoder = Model { encoder: model.encoder, classifier: None, decoder: None, projector: None };
    let meta = CheckpointMeta::new(Role::InterTrained, cfg.seed)
        .with_parent(stock.fingerprint())
        .with_param("algorithm", cfg.algorithm.as_str())
        .with_param("steps", cfg.steps)
        .with_param("batch_size", cfg.batch_size)
        .with_param("peak_lr", cfg.peak_lr)
        .with_param("mask_ratio", cfg.mask_ratio)
        .with_param("temperature", cfg.temperature)
        .with_param("local_views", cfg.local_views)
        .with_param("source", &data.source);
    Ok(TrainOutcome { params: encoder.to_tensors(), meta, initial_loss, final_loss, losses })
}
