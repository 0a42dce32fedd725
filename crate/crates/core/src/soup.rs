//! Soup construction: uniform, greedy, seasoning by random simplex search,
//! label-free Self-Seasoning, and linear mode connectivity reports.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{knn_entropy, knn_loo_accuracy, KnnConfig};
use crate::linalg::{EmbeddingMatrix, Matrix};
use crate::mixer::{interpolation_path, mix, sample_simplex_uniform, MixtureWeights};
use crate::rng::{self, derive_seed};
use crate::tensor::{assert_compatible, TensorSet};
use crate::train::{cosine_between, AdamW};

/// Equal-weight average of all ingredients.
pub fn uniform_soup(ingredients: &[&TensorSet]) -> Result<TensorSet> {
    if ingredients.is_empty() {
        return Err(Error::InvalidConfig("a soup needs at least one ingredient".to_string()));
    }
    mix(ingredients, &MixtureWeights::uniform(ingredients.len()))
}

/// One candidate considered by the greedy search.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep {
    pub candidate: usize,
    pub score: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct GreedySoup {
    /// Selected ingredient indices, ascending.
    pub selected: Vec<usize>,
    pub soup: TensorSet,
    pub score: f64,
    /// Individual scores of all ingredients, by index.
    pub ingredient_scores: Vec<f64>,
    pub trace: Vec<GreedyStep>,
}

/// Ranks ingredients by `eval` (descending, lower index first on ties), starts
/// from the best one and keeps each next candidate iff the uniform soup of the
/// enlarged pool scores at least as well as the current pool.
pub fn greedy_soup<F>(ingredients: &[&TensorSet], mut eval: F) -> Result<GreedySoup>
where
    F: FnMut(&TensorSet) -> Result<f64>,
{
    if ingredients.is_empty() {
        return Err(Error::InvalidConfig("a soup needs at least one ingredient".to_string()));
    }
    assert_compatible(ingredients)?;
    let ingredient_scores = ingredients.iter().map(|s| eval(s)).collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..ingredients.len()).collect();
    order.sort_by(|&a, &b| ingredient_scores[b].total_cmp(&ingredient_scores[a]).then(a.cmp(&b)));

    let mut pool = alloc::vec![order[0]];
    let mut soup = ingredients[order[0]].clone();
    let mut score = ingredient_scores[order[0]];
    let mut trace = alloc::vec![GreedyStep { candidate: order[0], score, accepted: true }];
    for &cand in &order[1..] {
        let mut trial = pool.clone();
        trial.push(cand);
        let members: Vec<&TensorSet> = trial.iter().map(|&i| ingredients[i]).collect();
        let candidate_soup = uniform_soup(&members)?;
        let s = eval(&candidate_soup)?;
        let accepted = s >= score;
        trace.push(GreedyStep { candidate: cand, score: s, accepted });
        if accepted {
            pool = trial;
            soup = candidate_soup;
            score = s;
        }
    }
    let best_single = ingredient_scores[order[0]];
    debug_assert!(score >= best_single);
    pool.sort_unstable();
    Ok(GreedySoup { selected: pool, soup, score, ingredient_scores, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonConfig {
    pub trials: usize,
    pub knn: KnnConfig,
    pub seed: u64,
}

impl Default for SeasonConfig {
    fn default() -> Self {
        Self { trials: 1000, knn: KnnConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Seasoning {
    pub weights: MixtureWeights,
    pub score: f64,
    pub best_trial: usize,
    pub trial_scores: Vec<f64>,
}

/// The `trials` Dirichlet(1) candidates of a seasoning run, in trial order.
pub fn draw_trials(m: usize, trials: usize, seed: u64) -> Vec<MixtureWeights> {
    let mut r = rng::stream(derive_seed(seed, "season", m as u64));
    (0..trials).map(|_| sample_simplex_uniform(m, &mut r)).collect()
}

/// First trial with the highest score.
pub fn select_best(candidates: Vec<MixtureWeights>, scores: Vec<f64>) -> Result<Seasoning> {
    if candidates.is_empty() || candidates.len() != scores.len() {
        return Err(Error::LengthMismatch { left: candidates.len(), right: scores.len() });
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::EvalFailed(format!("trial {i} scored {s}")));
        }
        if s > scores[best] {
            best = i;
        }
    }
    let weights = candidates.into_iter().nth(best).expect("index within range");
    Ok(Seasoning { weights, score: scores[best], best_trial: best, trial_scores: scores })
}

/// Leave-one-out kNN accuracy of the mixture's embeddings on a labeled few-shot set.
pub fn few_shot_score<E>(soup: &TensorSet, few_shot: &LabeledDataset, knn: &KnnConfig, embed: &mut E) -> Result<f64>
where
    E: FnMut(&TensorSet, &Matrix) -> Result<EmbeddingMatrix>,
{
    let z = embed(soup, &few_shot.inputs)?;
    knn_loo_accuracy(&z, &few_shot.labels, knn)
}

/// Random simplex search scored with few-shot labels.
pub fn season_random<E>(
    ingredients: &[&TensorSet],
    few_shot: &LabeledDataset,
    cfg: &SeasonConfig,
    mut embed: E,
) -> Result<Seasoning>
where
    E: FnMut(&TensorSet, &Matrix) -> Result<EmbeddingMatrix>,
{
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".to_string()));
    }
    if few_shot.len() < cfg.knn.k + 1 {
        return Err(Error::TooFewRefs { got: few_shot.len(), need: cfg.knn.k + 1 });
    }
    assert_compatible(ingredients)?;
    let candidates = draw_trials(ingredients.len(), cfg.trials, cfg.seed);
    let scores = candidates
        .iter()
        .map(|w| few_shot_score(&mix(ingredients, w)?, few_shot, &cfg.knn, &mut embed))
        .collect::<Result<Vec<f64>>>()?;
    select_best(candidates, scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogitOptimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adam with decoupled weight decay 0.01.
    AdamW,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfSeasonConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_size: usize,
    pub knn: KnnConfig,
    /// Central finite-difference step on the logits.
    pub fd_step: f64,
    pub optimizer: LogitOptimizer,
    pub seed: u64,
}

impl Default for SelfSeasonConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr_start: 0.1,
            lr_end: 0.01,
            batch_size: 256,
            knn: KnnConfig::default(),
            fd_step: 1e-3,
            optimizer: LogitOptimizer::Sgd,
            seed: 0,
        }
    }
}

impl SelfSeasonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return Err(Error::InvalidConfig("need lr_start >= lr_end > 0".to_string()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::InvalidConfig("fd_step must be positive".to_string()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".to_string()));
        }
        self.knn.validate()
    }
}

/// Softmax of unconstrained logits. The max is subtracted first, so logits
/// that differ by a constant shift give bit-identical weights.
pub fn softmax_weights(z: &[f64]) -> MixtureWeights {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = e.iter().sum();
    MixtureWeights::new(e.into_iter().map(|v| v / total).collect()).expect("softmax lies on the simplex")
}

#[derive(Debug, Clone)]
pub struct SelfSeasoning {
    pub weights: MixtureWeights,
    pub logits: Vec<f64>,
    /// Mean batch entropy at the start of every epoch's updates.
    pub entropy_curve: Vec<f64>,
    pub steps: usize,
}

/// Entropy objective and its central finite-difference gradient at `z`.
pub fn entropy_and_fd_gradient<E>(
    ingredients: &[&TensorSet],
    batch: &Matrix,
    z: &[f64],
    knn: &KnnConfig,
    h: f64,
    embed: &mut E,
) -> Result<(f64, Vec<f64>)>
where
    E: FnMut(&TensorSet, &Matrix) -> Result<EmbeddingMatrix>,
{
    let mut objective = |logits: &[f64]| -> Result<f64> {
        let soup = mix(ingredients, &softmax_weights(logits))?;
        knn_entropy(&embed(&soup, batch)?, knn)
    };
    let value = objective(z)?;
    let mut grad = alloc::vec![0.0; z.len()];
    let mut probe = z.to_vec();
    for i in 0..z.len() {
        probe[i] = z[i] + h;
        let up = objective(&probe)?;
        probe[i] = z[i] - h;
        let down = objective(&probe)?;
        probe[i] = z[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok((value, grad))
}

/// Label-free mixture search: minimizes the in-batch kNN neighbor entropy of
/// the soup's embeddings over softmax-parameterized mixture logits.
///
/// Batches are epoch-shuffled without replacement; a tail batch with at most
/// `k` rows is dropped. A set smaller than `batch_size` is used whole.
pub fn self_season<E>(
    ingredients: &[&TensorSet],
    inputs: &Matrix,
    cfg: &SelfSeasonConfig,
    mut embed: E,
) -> Result<SelfSeasoning>
where
    E: FnMut(&TensorSet, &Matrix) -> Result<EmbeddingMatrix>,
{
    cfg.validate()?;
    if ingredients.len() < 2 {
        return Err(Error::InvalidConfig("self-seasoning needs at least 2 ingredients".to_string()));
    }
    assert_compatible(ingredients)?;
    let n = inputs.rows();
    let bs = cfg.batch_size.min(n);
    if bs <= cfg.knn.k {
        return Err(Error::BatchTooSmall { got: bs, need: cfg.knn.k + 1 });
    }
    let per_epoch = n / bs + usize::from(n % bs > cfg.knn.k);
    let total = cfg.epochs * per_epoch;

    let m = ingredients.len();
    let mut z = alloc::vec![0.0; m];
    let mut adam = AdamW::new(0.01);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = rng::permutation(&mut rng::stream(derive_seed(cfg.seed, "self_season", epoch as u64)), n);
        let mut epoch_sum = 0.0;
        for b in 0..per_epoch {
            let idx = &order[b * bs..((b + 1) * bs).min(n)];
            let batch = inputs.gather(idx);
            let (value, grad) = entropy_and_fd_gradient(ingredients, &batch, &z, &cfg.knn, cfg.fd_step, &mut embed)?;
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { step });
            }
            epoch_sum += value;
            let lr = cosine_between(step, total, cfg.lr_start, cfg.lr_end);
            match cfg.optimizer {
                LogitOptimizer::Sgd => z.iter_mut().zip(&grad).for_each(|(zi, g)| *zi -= lr * g),
                LogitOptimizer::AdamW => adam.step(alloc::vec![&mut z[..]], alloc::vec![&grad[..]], lr),
            }
            step += 1;
        }
        curve.push(epoch_sum / per_epoch as f64);
    }
    Ok(SelfSeasoning { weights: softmax_weights(&z), logits: z, entropy_curve: curve, steps: step })
}

/// Slack allowed below the chord before a point counts as an LMC violation.
pub const LMC_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LmcReport {
    pub lambdas: Vec<f64>,
    pub curve: Vec<f64>,
    pub chord: Vec<f64>,
    pub satisfied: Vec<bool>,
    /// AND over interior points.
    pub lmc_holds: bool,
    pub violations: Vec<usize>,
}

/// LMC check of an evaluated curve against the chord between its endpoints.
pub fn lmc_from_curve(lambdas: &[f64], curve: &[f64]) -> Result<LmcReport> {
    if lambdas.len() != curve.len() {
        return Err(Error::LengthMismatch { left: lambdas.len(), right: curve.len() });
    }
    if curve.len() < 2 {
        return Err(Error::InvalidConfig("a sweep needs both endpoints".to_string()));
    }
    let (first, last) = (curve[0], curve[curve.len() - 1]);
    let chord: Vec<f64> = lambdas.iter().map(|&l| (1.0 - l) * first + l * last).collect();
    let satisfied: Vec<bool> = curve.iter().zip(&chord).map(|(c, h)| *c >= h - LMC_SLACK).collect();
    let violations: Vec<usize> = (1..curve.len() - 1).filter(|&i| !satisfied[i]).collect();
    Ok(LmcReport {
        lambdas: lambdas.to_vec(),
        curve: curve.to_vec(),
        chord,
        satisfied,
        lmc_holds: violations.is_empty(),
        violations,
    })
}

/// Evaluates `eval` at `num_points` evenly spaced points between `a` and `b`.
pub fn lmc_report<F>(a: &TensorSet, b: &TensorSet, mut eval: F, num_points: usize) -> Result<LmcReport>
where
    F: FnMut(&TensorSet) -> Result<f64>,
{
    if num_points < 3 {
        return Err(Error::InvalidConfig("num_points must be at least 3".to_string()));
    }
    let lambdas: Vec<f64> = (0..num_points).map(|k| k as f64 / (num_points - 1) as f64).collect();
    let curve = interpolation_path(a, b, &lambdas)?.iter().map(&mut eval).collect::<Result<Vec<f64>>>()?;
    lmc_from_curve(&lambdas, &curve)
}
