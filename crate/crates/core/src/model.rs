//! A small tanh MLP encoder with optional heads and hand-written backprop.
//!
//! Parameters live in [`TensorSet`]s as f32; training and evaluation run on an
//! f64 [`Model`] built from them. Tensor names:
//!
//! | tensor                              | shape            |
//! |-------------------------------------|------------------|
//! | `layer{i}.weight`, `layer{i}.bias`  | `[in, out]`, `[out]` |
//! | `head.classifier.{weight,bias}`     | `[D, C]`, `[C]`  |
//! | `head.decoder.{weight,bias}`        | `[D, input]`, `[input]` |
//! | `head.projector.layer{i}.{weight,bias}` | 2-layer MLP on the embedding |

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::linalg::{dot, EmbeddingMatrix, Matrix};
use crate::rng;
use crate::tensor::{Tensor, TensorSet};

pub const CLASSIFIER: &str = "head.classifier";
pub const DECODER: &str = "head.decoder";
pub const PROJECTOR: &str = "head.projector";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { input_dim: 256, hidden_dims: alloc::vec![64, 64], embed_dim: 32 }
    }
}

impl EncoderConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, embed_dim: usize) -> Result<Self> {
        let cfg = Self { input_dim, hidden_dims, embed_dim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("all encoder dimensions must be >= 1".to_string()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every encoder layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(core::iter::once(&self.embed_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Fully connected layer computing `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `[fan_in, fan_out]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { fan_in, fan_out, weight: alloc::vec![0.0; fan_in * fan_out], bias: alloc::vec![0.0; fan_out] }
    }

    /// Uniform weights in `±sqrt(3 / fan_in)` (unit-variance pre-activations), zero bias.
    pub fn init<R: RngCore + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = libm::sqrt(3.0 / fan_in as f64);
        let weight = (0..fan_in * fan_out).map(|_| (2.0 * rng::open01(rng) - 1.0) * bound).collect();
        Self { fan_in, fan_out, weight, bias: alloc::vec![0.0; fan_out] }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        debug_assert_eq!(x.cols(), self.fan_in);
        let mut out = Matrix::zeros(x.rows(), self.fan_out);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let oi = out.row_mut(i);
            oi.copy_from_slice(&self.bias);
            for (k, &xk) in xi.iter().enumerate() {
                let wk = &self.weight[k * self.fan_out..(k + 1) * self.fan_out];
                for (o, w) in oi.iter_mut().zip(wk) {
                    *o += xk * w;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx` when asked.
    pub fn backward(&self, x: &Matrix, dout: &Matrix, grad: &mut Dense, want_input: bool) -> Option<Matrix> {
        for i in 0..x.rows() {
            let xi = x.row(i);
            let di = dout.row(i);
            for (b, d) in grad.bias.iter_mut().zip(di) {
                *b += d;
            }
            for (k, &xk) in xi.iter().enumerate() {
                let gk = &mut grad.weight[k * self.fan_out..(k + 1) * self.fan_out];
                for (g, d) in gk.iter_mut().zip(di) {
                    *g += xk * d;
                }
            }
        }
        want_input.then(|| {
            let mut dx = Matrix::zeros(x.rows(), self.fan_in);
            for i in 0..x.rows() {
                let di = dout.row(i);
                let dxi = dx.row_mut(i);
                for (k, v) in dxi.iter_mut().enumerate() {
                    *v = dot(di, &self.weight[k * self.fan_out..(k + 1) * self.fan_out]);
                }
            }
            dx
        })
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weight, &mut self.bias]
    }

    fn slices(&self) -> [&[f64]; 2] {
        [&self.weight, &self.bias]
    }

    fn from_tensors(set: &TensorSet, prefix: &str) -> Result<Option<Dense>> {
        let wname = format!("{prefix}.weight");
        let bname = format!("{prefix}.bias");
        let (Some(w), Some(b)) = (set.get(&wname), set.get(&bname)) else {
            if set.contains(&wname) || set.contains(&bname) {
                return Err(Error::shape(prefix, "weight and bias must both be present"));
            }
            return Ok(None);
        };
        let &[fan_in, fan_out] = w.shape() else {
            return Err(Error::shape(wname, format!("expected a matrix, got {:?}", w.shape())));
        };
        if b.shape() != [fan_out] {
            return Err(Error::shape(bname, format!("expected [{fan_out}], got {:?}", b.shape())));
        }
        Ok(Some(Dense {
            fan_in,
            fan_out,
            weight: w.data().iter().map(|&v| f64::from(v)).collect(),
            bias: b.data().iter().map(|&v| f64::from(v)).collect(),
        }))
    }

    fn write_tensors(&self, set: &mut TensorSet, prefix: &str) {
        let w = self.weight.iter().map(|&v| v as f32).collect();
        let b = self.bias.iter().map(|&v| v as f32).collect();
        set.insert(
            format!("{prefix}.weight"),
            Tensor::new(alloc::vec![self.fan_in, self.fan_out], w).expect("dense shape"),
        );
        set.insert(format!("{prefix}.bias"), Tensor::new(alloc::vec![self.fan_out], b).expect("dense shape"));
    }
}

/// Stack of dense layers with tanh between them and a linear last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer activations saved by [`Mlp::forward_cached`]; `acts[0]` is the input.
pub struct MlpCache {
    pub acts: Vec<Matrix>,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("cache holds the input at least")
    }
}

impl Mlp {
    pub fn init<R: RngCore + ?Sized>(dims: &[(usize, usize)], rng: &mut R) -> Self {
        Self { layers: dims.iter().map(|&(i, o)| Dense::init(i, o, rng)).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.fan_in, l.fan_out)).collect() }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h.data_mut().iter_mut().for_each(|v| *v = libm::tanh(*v));
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &Matrix) -> MlpCache {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(acts.last().expect("non-empty"));
            if i < last {
                h.data_mut().iter_mut().for_each(|v| *v = libm::tanh(*v));
            }
            acts.push(h);
        }
        MlpCache { acts }
    }

    pub fn backward(&self, cache: &MlpCache, dout: &Matrix, grad: &mut Mlp, want_input: bool) -> Option<Matrix> {
        let last = self.layers.len() - 1;
        let mut d = dout.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                // tanh'(z) = 1 - tanh(z)^2, with tanh(z) cached as the layer output
                for (dv, a) in d.data_mut().iter_mut().zip(cache.acts[i + 1].data()) {
                    *dv *= 1.0 - a * a;
                }
            }
            let need = want_input || i > 0;
            d = self.layers[i].backward(&cache.acts[i], &d, &mut grad.layers[i], need)?;
        }
        Some(d)
    }

    fn from_tensors(set: &TensorSet, prefix: &str) -> Result<Option<Mlp>> {
        let mut layers = Vec::new();
        loop {
            let name = if prefix.is_empty() {
                format!("layer{}", layers.len())
            } else {
                format!("{prefix}.layer{}", layers.len())
            };
            match Dense::from_tensors(set, &name)? {
                Some(d) => {
                    if let Some(prev) = layers.last().map(|l: &Dense| l.fan_out) {
                        if prev != d.fan_in {
                            return Err(Error::shape(
                                format!("{name}.weight"),
                                format!("fan_in {} does not follow previous fan_out {prev}", d.fan_in),
                            ));
                        }
                    }
                    layers.push(d);
                }
                None => break,
            }
        }
        Ok((!layers.is_empty()).then_some(Mlp { layers }))
    }

    fn write_tensors(&self, set: &mut TensorSet, prefix: &str) {
        for (i, l) in self.layers.iter().enumerate() {
            let name = if prefix.is_empty() { format!("layer{i}") } else { format!("{prefix}.layer{i}") };
            l.write_tensors(set, &name);
        }
    }
}

/// Encoder plus whichever heads are present.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Mlp,
    pub classifier: Option<Dense>,
    pub decoder: Option<Dense>,
    pub projector: Option<Mlp>,
}

impl Model {
    pub fn from_tensors(set: &TensorSet) -> Result<Model> {
        let encoder =
            Mlp::from_tensors(set, "")?.ok_or_else(|| Error::shape("layer0.weight", "encoder tensors missing"))?;
        let embed = encoder.output_dim();
        let classifier = Dense::from_tensors(set, CLASSIFIER)?;
        let decoder = Dense::from_tensors(set, DECODER)?;
        let projector = Mlp::from_tensors(set, PROJECTOR)?;
        for (name, fan_in) in [
            (CLASSIFIER, classifier.as_ref().map(|d| d.fan_in)),
            (DECODER, decoder.as_ref().map(|d| d.fan_in)),
            (PROJECTOR, projector.as_ref().map(Mlp::input_dim)),
        ] {
            if let Some(f) = fan_in.filter(|&f| f != embed) {
                return Err(Error::shape(name, format!("head expects {f} inputs, encoder emits {embed}")));
            }
        }
        if let Some(d) = &decoder {
            if d.fan_out != encoder.input_dim() {
                return Err(Error::shape(DECODER, "decoder must reconstruct the input dimension"));
            }
        }
        let known = |n: &str| {
            n.starts_with("layer") || n.starts_with(CLASSIFIER) || n.starts_with(DECODER) || n.starts_with(PROJECTOR)
        };
        if let Some(other) = set.names().find(|n| !known(n)) {
            return Err(Error::shape(other, "unrecognised tensor name"));
        }
        let model = Model { encoder, classifier, decoder, projector };
        if model.num_params() != set.num_params() {
            return Err(Error::shape("encoder", "non-contiguous layer numbering"));
        }
        Ok(model)
    }

    pub fn to_tensors(&self) -> TensorSet {
        let mut set = TensorSet::new();
        self.encoder.write_tensors(&mut set, "");
        if let Some(c) = &self.classifier {
            c.write_tensors(&mut set, CLASSIFIER);
        }
        if let Some(d) = &self.decoder {
            d.write_tensors(&mut set, DECODER);
        }
        if let Some(p) = &self.projector {
            p.write_tensors(&mut set, PROJECTOR);
        }
        set
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn zeros_like(&self) -> Model {
        Model {
            encoder: self.encoder.zeros_like(),
            classifier: self.classifier.as_ref().map(|d| Dense::zeros(d.fan_in, d.fan_out)),
            decoder: self.decoder.as_ref().map(|d| Dense::zeros(d.fan_in, d.fan_out)),
            projector: self.projector.as_ref().map(Mlp::zeros_like),
        }
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter slices in a fixed order (encoder, classifier, decoder, projector).
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.encoder.layers {
            out.extend(l.slices());
        }
        if let Some(c) = &self.classifier {
            out.extend(c.slices());
        }
        if let Some(d) = &self.decoder {
            out.extend(d.slices());
        }
        if let Some(p) = &self.projector {
            for l in &p.layers {
                out.extend(l.slices());
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.encoder.layers {
            out.extend(l.slices_mut());
        }
        if let Some(c) = &mut self.classifier {
            out.extend(c.slices_mut());
        }
        if let Some(d) = &mut self.decoder {
            out.extend(d.slices_mut());
        }
        if let Some(p) = &mut self.projector {
            for l in &mut p.layers {
                out.extend(l.slices_mut());
            }
        }
        out
    }

    pub fn embed(&self, batch: &Matrix) -> Result<EmbeddingMatrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                "layer0.weight",
                format!("batch has {} columns, encoder expects {}", batch.cols(), self.input_dim()),
            ));
        }
        Ok(self.encoder.forward(batch))
    }
}

/// Fresh encoder with fan-in scaled uniform weights and zero biases.
pub fn init_stock(cfg: &EncoderConfig, seed: u64) -> Result<TensorSet> {
    cfg.validate()?;
    let mut r = rng::stream(seed);
    let encoder = Mlp::init(&cfg.layer_dims(), &mut r);
    Ok(Model { encoder, classifier: None, decoder: None, projector: None }.to_tensors())
}

/// Encoder forward pass; heads in `params` are ignored.
pub fn forward_embed(params: &TensorSet, batch: &Matrix) -> Result<EmbeddingMatrix> {
    let encoder =
        Mlp::from_tensors(params, "")?.ok_or_else(|| Error::shape("layer0.weight", "encoder tensors missing"))?;
    Model { encoder, classifier: None, decoder: None, projector: None }.embed(batch)
}

/// Names belonging to the encoder (not to any head).
pub fn is_encoder_tensor(name: &str) -> bool {
    !name.starts_with("head.")
}

pub fn encoder_subset(params: &TensorSet) -> TensorSet {
    params.filtered(is_encoder_tensor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn default_config_param_count() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.num_params(), init_stock(&cfg, 0).unwrap().num_params());
    }

    #[test]
    fn stock_names_and_zero_bias() {
        let s = init_stock(&EncoderConfig::new(16, vec![8], 4).unwrap(), 1).unwrap();
        let names: Vec<&str> = s.names().collect();
        assert_eq!(names, ["layer0.bias", "layer0.weight", "layer1.bias", "layer1.weight"]);
        assert!(s.get("layer1.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_through_model_is_exact() {
        let s = init_stock(&EncoderConfig::new(16, vec![8, 8], 4).unwrap(), 2).unwrap();
        assert_eq!(Model::from_tensors(&s).unwrap().to_tensors(), s);
    }

    #[test]
    fn wrong_batch_width() {
        let s = init_stock(&EncoderConfig::new(16, vec![8], 4).unwrap(), 3).unwrap();
        assert!(matches!(forward_embed(&s, &Matrix::zeros(2, 15)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn broken_chain_rejected() {
        let mut s = init_stock(&EncoderConfig::new(16, vec![8], 4).unwrap(), 3).unwrap();
        s.insert("layer1.weight", Tensor::zeros(vec![7, 4]));
        assert!(Model::from_tensors(&s).is_err());
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(EncoderConfig::new(0, vec![4], 2).is_err());
        assert!(EncoderConfig::new(4, vec![0], 2).is_err());
    }
}
