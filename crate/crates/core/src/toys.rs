//! Small fixed setups with a known answer, used to exercise soup search.

use alloc::vec;

use crate::data::{PatternSpec, Split};
use crate::linalg::Matrix;
use crate::model::{encoder_subset, init_stock, EncoderConfig, Model};
use crate::rng::derive_seed;
use crate::tensor::TensorSet;
use crate::train::{train_supervised, TrainConfig};
use crate::Result;

/// Copy of `params` whose encoder maps every input to nearly the same
/// embedding: all parameters shrunk by `1e-3`, output bias set to `bias`.
pub fn degenerate_encoder(params: &TensorSet, bias: f64) -> Result<TensorSet> {
    let mut model = Model::from_tensors(params)?;
    for s in model.slices_mut() {
        s.iter_mut().for_each(|v| *v *= 1e-3);
    }
    let last = model.encoder.layers.last_mut().expect("encoder has layers");
    last.bias.iter_mut().for_each(|v| *v = bias);
    Ok(model.to_tensors())
}

/// Two encoder-only ingredients from one stock: `clustering` separates the
/// 32 pattern classes, `degenerate` collapses every input onto one point.
#[derive(Debug, Clone)]
pub struct ClusterToy {
    pub clustering: TensorSet,
    pub degenerate: TensorSet,
    pub unlabeled: Matrix,
}

impl ClusterToy {
    pub const CLASSES: usize = 32;
    pub const SIDE: usize = 8;
    pub const UNLABELED: usize = 1024;

    pub fn build(seed: u64) -> Result<Self> {
        let spec = PatternSpec {
            noise: 0.2,
            ..PatternSpec::new(Self::CLASSES, Self::SIDE, derive_seed(seed, "toy_templates", 0))
        };
        let train = spec.generate(400, derive_seed(seed, "toy_train", 0), Split::Train)?;
        let unlabeled = spec.generate(Self::UNLABELED, derive_seed(seed, "toy_unlabeled", 0), Split::Test)?.inputs;
        let cfg = EncoderConfig::new(spec.input_dim(), vec![32, 32], 16)?;
        let stock = init_stock(&cfg, derive_seed(seed, "toy_stock", 0))?;
        let tc = TrainConfig { steps: 300, seed: derive_seed(seed, "toy_finetune", 0), ..TrainConfig::default() };
        let clustering = encoder_subset(&train_supervised(&stock, &train, &tc)?.params);
        let degenerate = degenerate_encoder(&stock, 1.0)?;
        Ok(Self { clustering, degenerate, unlabeled })
    }

    /// `[clustering, degenerate]`.
    pub fn ingredients(&self) -> [&TensorSet; 2] {
        [&self.clustering, &self.degenerate]
    }
}
