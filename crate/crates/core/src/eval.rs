//! kNN classification, accuracy and in-batch kNN neighbor entropy on
//! embeddings.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, EmbeddingMatrix, Matrix};
use crate::model::{forward_embed, Model};
use crate::tensor::TensorSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Voting {
    /// Each neighbor votes with `exp(similarity / T)`.
    Weighted,
    /// One vote per neighbor.
    Majority,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    pub temperature: f64,
    pub voting: Voting,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 16, temperature: 0.07, voting: Voting::Weighted }
    }
}

impl KnnConfig {
    pub fn new(k: usize, temperature: f64) -> Self {
        Self { k, temperature, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".to_string()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".to_string()));
        }
        Ok(())
    }
}

/// Indices of the `k` largest values of `sims`, skipping `exclude`; ties go to
/// the lower index.
fn top_k(sims: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).filter(|&j| Some(j) != exclude).collect();
    idx.sort_by(|&x, &y| sims[y].total_cmp(&sims[x]).then(x.cmp(&y)));
    idx.truncate(k);
    idx
}

fn vote(sims: &[f64], neighbors: &[usize], labels: &[usize], classes: usize, cfg: &KnnConfig) -> usize {
    let mut scores = alloc::vec![0.0; classes];
    for &j in neighbors {
        scores[labels[j]] += match cfg.voting {
            Voting::Weighted => libm::exp(sims[j] / cfg.temperature),
            Voting::Majority => 1.0,
        };
    }
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

fn check_dims(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::shape("embedding", format!("{} vs {} columns", a.cols(), b.cols())));
    }
    Ok(())
}

/// Cosine-similarity kNN classifier.
pub fn knn_predict(
    ref_z: &EmbeddingMatrix,
    ref_labels: &[usize],
    query_z: &EmbeddingMatrix,
    cfg: &KnnConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if ref_z.rows() != ref_labels.len() {
        return Err(Error::LengthMismatch { left: ref_z.rows(), right: ref_labels.len() });
    }
    if ref_z.rows() < cfg.k {
        return Err(Error::TooFewRefs { got: ref_z.rows(), need: cfg.k });
    }
    check_dims(ref_z, query_z)?;
    let refs = ref_z.l2_normalized();
    let queries = query_z.l2_normalized();
    let classes = ref_labels.iter().max().map_or(1, |m| m + 1);
    let mut sims = alloc::vec![0.0; refs.rows()];
    Ok((0..queries.rows())
        .map(|q| {
            let qv = queries.row(q);
            for (j, s) in sims.iter_mut().enumerate() {
                *s = dot(qv, refs.row(j));
            }
            vote(&sims, &top_k(&sims, cfg.k, None), ref_labels, classes, cfg)
        })
        .collect())
}

/// Leave-one-out kNN accuracy: every row is classified by the others.
pub fn knn_loo_accuracy(z: &EmbeddingMatrix, labels: &[usize], cfg: &KnnConfig) -> Result<f64> {
    cfg.validate()?;
    if z.rows() != labels.len() {
        return Err(Error::LengthMismatch { left: z.rows(), right: labels.len() });
    }
    if z.rows() < cfg.k + 1 {
        return Err(Error::TooFewRefs { got: z.rows(), need: cfg.k + 1 });
    }
    let n = z.l2_normalized();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let mut sims = alloc::vec![0.0; n.rows()];
    let mut correct = 0usize;
    for i in 0..n.rows() {
        for (j, s) in sims.iter_mut().enumerate() {
            *s = dot(n.row(i), n.row(j));
        }
        if vote(&sims, &top_k(&sims, cfg.k, Some(i)), labels, classes, cfg) == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n.rows() as f64)
}

/// Fraction of exact matches.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptySplit);
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mean entropy of each row's temperature-softmaxed top-k cosine similarities
/// to the other rows of the batch.
pub fn knn_entropy(z: &EmbeddingMatrix, cfg: &KnnConfig) -> Result<f64> {
    cfg.validate()?;
    let b = z.rows();
    if b < cfg.k + 1 {
        return Err(Error::BatchTooSmall { got: b, need: cfg.k + 1 });
    }
    let n = z.l2_normalized();
    let mut sims = alloc::vec![0.0; b];
    let mut p = alloc::vec![0.0; cfg.k];
    let mut total = 0.0;
    for i in 0..b {
        for (j, s) in sims.iter_mut().enumerate() {
            *s = dot(n.row(i), n.row(j));
        }
        let top = top_k(&sims, cfg.k, Some(i));
        let max = sims[top[0]] / cfg.temperature;
        let mut z = 0.0;
        for (pv, &j) in p.iter_mut().zip(&top) {
            *pv = libm::exp(sims[j] / cfg.temperature - max);
            z += *pv;
        }
        let mut h = 0.0;
        for pv in p.iter_mut() {
            *pv /= z;
            h -= *pv * libm::log(pv.max(1e-12));
        }
        total += h;
    }
    Ok(total / b as f64)
}

/// Encoder outputs for every row of `inputs`, computed `batch_size` rows at a time.
pub fn embed_dataset(params: &TensorSet, inputs: &Matrix, batch_size: usize) -> Result<EmbeddingMatrix> {
    let model = Model::from_tensors(&crate::model::encoder_subset(params))?;
    let bs = batch_size.max(1);
    let parts = (0..inputs.rows())
        .step_by(bs)
        .map(|start| {
            let idx: Vec<usize> = (start..(start + bs).min(inputs.rows())).collect();
            model.embed(&inputs.gather(&idx))
        })
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Ok(Matrix::zeros(0, model.embed_dim()));
    }
    Matrix::vstack(&parts)
}

/// Predictions of the classifier head.
pub fn head_predict(params: &TensorSet, inputs: &Matrix) -> Result<Vec<usize>> {
    let model = Model::from_tensors(params)?;
    let head =
        model.classifier.as_ref().ok_or_else(|| Error::shape(crate::model::CLASSIFIER, "classifier head missing"))?;
    let logits = head.forward(&model.embed(inputs)?);
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

pub fn head_accuracy(params: &TensorSet, data: &LabeledDataset) -> Result<f64> {
    accuracy(&head_predict(params, &data.inputs)?, &data.labels)
}

/// kNN accuracy of `queries` against `refs`, both embedded by `params`.
pub fn knn_accuracy(
    params: &TensorSet,
    refs: &LabeledDataset,
    queries: &LabeledDataset,
    cfg: &KnnConfig,
) -> Result<f64> {
    let rz = forward_embed(params, &refs.inputs)?;
    let qz = forward_embed(params, &queries.inputs)?;
    accuracy(&knn_predict(&rz, &refs.labels, &qz, cfg)?, &queries.labels)
}
