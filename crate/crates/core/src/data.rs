//! Procedural pattern datasets and a small corruption suite.
//!
//! Each class is a smooth random `side x side` template (a few toroidal
//! Gaussian bumps, orthogonalized against the earlier classes and
//! standardized to zero mean and unit variance). A sample is
//! its class template circularly shifted by at most `max_shift` pixels per
//! axis plus i.i.d. Gaussian pixel noise.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorruptionKind {
    GaussianNoise,
    BoxBlur,
    Contrast,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] =
        [CorruptionKind::GaussianNoise, CorruptionKind::BoxBlur, CorruptionKind::Contrast, CorruptionKind::Pixelate];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::BoxBlur => "box_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Name of the parameter the severity table controls.
    pub fn parameter_name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "sigma",
            CorruptionKind::BoxBlur => "radius",
            CorruptionKind::Contrast => "factor",
            CorruptionKind::Pixelate => "block",
        }
    }

    /// Parameter for severities 1..=5.
    pub fn table(self) -> [f64; 5] {
        match self {
            CorruptionKind::GaussianNoise => [0.05, 0.1, 0.2, 0.35, 0.5],
            CorruptionKind::BoxBlur => [1.0, 1.0, 2.0, 2.0, 3.0],
            CorruptionKind::Contrast => [0.75, 0.5, 0.4, 0.3, 0.2],
            CorruptionKind::Pixelate => [2.0, 2.0, 4.0, 4.0, 8.0],
        }
    }

    pub fn parameter(self, severity: u8) -> Result<f64> {
        match severity {
            1..=5 => Ok(self.table()[usize::from(severity) - 1]),
            _ => Err(Error::InvalidConfig(format!("severity {severity} outside 1..=5"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub severity: u8,
}

/// Samples with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub corruption: Option<Corruption>,
    pub split: Split,
    pub seed: u64,
}

/// Inputs only; `source` names the dataset they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    pub inputs: Matrix,
    pub source: String,
    pub corruption: Option<Corruption>,
}

impl LabeledDataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize, split: Split, seed: u64) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::LengthMismatch { left: inputs.rows(), right: labels.len() });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!("label {bad} outside 0..{num_classes}")));
        }
        if !inputs.is_finite() {
            return Err(Error::InvalidConfig("non-finite input".to_string()));
        }
        Ok(Self { inputs, labels, num_classes, corruption: None, split, seed })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn unlabeled(&self, source: impl Into<String>) -> UnlabeledDataset {
        UnlabeledDataset { inputs: self.inputs.clone(), source: source.into(), corruption: self.corruption }
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: self.inputs.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone()
        }
    }

    /// The first `per_class` samples of every class, in stored order.
    pub fn few_shot(&self, per_class: usize) -> LabeledDataset {
        let mut counts = alloc::vec![0usize; self.num_classes];
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut counts[self.labels[i]];
                *c += 1;
                *c <= per_class
            })
            .collect();
        self.subset(&idx)
    }
}

impl UnlabeledDataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Access shared by labeled and unlabeled datasets.
pub trait Samples: Sized {
    fn inputs(&self) -> &Matrix;
    fn corruption(&self) -> Option<Corruption>;
    fn with_inputs(&self, inputs: Matrix, corruption: Option<Corruption>) -> Self;
    fn select(&self, indices: &[usize]) -> Self;
}

impl Samples for LabeledDataset {
    fn inputs(&self) -> &Matrix {
        &self.inputs
    }
    fn corruption(&self) -> Option<Corruption> {
        self.corruption
    }
    fn with_inputs(&self, inputs: Matrix, corruption: Option<Corruption>) -> Self {
        Self { inputs, corruption, ..self.clone() }
    }
    fn select(&self, indices: &[usize]) -> Self {
        self.subset(indices)
    }
}

impl Samples for UnlabeledDataset {
    fn inputs(&self) -> &Matrix {
        &self.inputs
    }
    fn corruption(&self) -> Option<Corruption> {
        self.corruption
    }
    fn with_inputs(&self, inputs: Matrix, corruption: Option<Corruption>) -> Self {
        Self { inputs, corruption, source: self.source.clone() }
    }
    fn select(&self, indices: &[usize]) -> Self {
        Self { inputs: self.inputs.gather(indices), ..self.clone() }
    }
}

/// Parameters of the pattern task. Datasets generated from the same spec share
/// class templates; `sample_seed` picks the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub classes: usize,
    pub side: usize,
    pub noise: f64,
    pub max_shift: usize,
    pub template_seed: u64,
}

impl PatternSpec {
    pub fn new(classes: usize, side: usize, template_seed: u64) -> Self {
        Self { classes, side, noise: 0.1, max_shift: side.div_ceil(16).min(side / 8), template_seed }
    }

    pub fn input_dim(&self) -> usize {
        self.side * self.side
    }

    fn check(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".to_string()));
        }
        if self.side < 8 {
            return Err(Error::InvalidConfig("side must be at least 8".to_string()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig("noise must be a finite non-negative number".to_string()));
        }
        Ok(())
    }

    /// Class templates, one row each.
    pub fn templates(&self) -> Result<Matrix> {
        self.check()?;
        let side = self.side;
        let mut r = rng::stream(derive_seed(self.template_seed, "templates", 0));
        let mut out = Matrix::zeros(self.classes, side * side);
        let sidef = side as f64;
        for c in 0..self.classes {
            let row = out.row_mut(c);
            for _ in 0..4 {
                let cy = rng::open01(&mut r) * sidef;
                let cx = rng::open01(&mut r) * sidef;
                let width = sidef * (0.125 + 0.125 * rng::open01(&mut r));
                let amp = if rng::open01(&mut r) < 0.5 { -1.0 } else { 1.0 };
                for y in 0..side {
                    for x in 0..side {
                        let dy = torus_delta(y as f64, cy, sidef);
                        let dx = torus_delta(x as f64, cx, sidef);
                        row[y * side + x] += amp * libm::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
                    }
                }
            }
            standardize(row);
        }
        orthogonalize(&mut out);
        Ok(out)
    }

    /// `n` samples with shuffled round-robin labels, in generation order.
    pub fn generate(&self, n: usize, sample_seed: u64, split: Split) -> Result<LabeledDataset> {
        let templates = self.templates()?;
        let side = self.side;
        let mut r = rng::stream(derive_seed(sample_seed, "samples", self.template_seed));
        let round_robin: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        let labels: Vec<usize> = rng::permutation(&mut r, n).into_iter().map(|i| round_robin[i]).collect();
        let span = 2 * self.max_shift + 1;
        let mut inputs = Matrix::zeros(n, side * side);
        for (i, &label) in labels.iter().enumerate() {
            let dy = rng::below(&mut r, span) + side - self.max_shift;
            let dx = rng::below(&mut r, span) + side - self.max_shift;
            let t = templates.row(label);
            let row = inputs.row_mut(i);
            for y in 0..side {
                for x in 0..side {
                    let src = ((y + dy) % side) * side + (x + dx) % side;
                    row[y * side + x] = t[src];
                }
            }
            if self.noise > 0.0 {
                for v in row.iter_mut() {
                    *v += self.noise * rng::normal(&mut r);
                }
            }
        }
        LabeledDataset::new(inputs, labels, self.classes, split, sample_seed)
    }
}

fn torus_delta(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).abs() % period;
    d.min(period - d)
}

/// Gram-Schmidt over the rows, then re-standardized. Rows beyond the
/// dimension are left as generated.
fn orthogonalize(m: &mut Matrix) {
    let d = m.cols();
    for c in 0..m.rows().min(d) {
        for prev in 0..c {
            let (head, tail) = m.data_mut().split_at_mut(c * d);
            let p = &head[prev * d..(prev + 1) * d];
            let row = &mut tail[..d];
            let coef = crate::linalg::dot(row, p) / crate::linalg::dot(p, p);
            row.iter_mut().zip(p).for_each(|(v, q)| *v -= coef * q);
        }
        standardize(m.row_mut(c));
    }
}

fn standardize(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = libm::sqrt(var).max(1e-12);
    row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// `C` classes, `N` samples of `side x side` patterns; templates and samples
/// both seeded by `seed`, default noise 0.1 and shift `ceil(side / 16)` capped at `side / 8`.
pub fn gen_patterns(classes: usize, n: usize, side: usize, seed: u64) -> Result<LabeledDataset> {
    PatternSpec::new(classes, side, seed).generate(n, seed, Split::Train)
}

/// Side length of a square input, or `NotSquare`.
pub fn square_side(input_dim: usize) -> Result<usize> {
    let s = libm::sqrt(input_dim as f64) as usize;
    (s.saturating_sub(1)..=s + 1).find(|&c| c * c == input_dim && c > 0).ok_or(Error::NotSquare { dim: input_dim })
}

/// Applies a corruption; severity 0 returns the dataset unchanged.
pub fn corrupt<D: Samples>(ds: &D, kind: CorruptionKind, severity: u8, seed: u64) -> Result<D> {
    let side = square_side(ds.inputs().cols())?;
    if severity == 0 {
        return Ok(ds.with_inputs(ds.inputs().clone(), ds.corruption()));
    }
    let param = kind.parameter(severity)?;
    let mut r = rng::stream(derive_seed(seed, kind.as_str(), u64::from(severity)));
    let src = ds.inputs();
    let mut out = Matrix::zeros(src.rows(), src.cols());
    for i in 0..src.rows() {
        let img = src.row(i);
        let dst = out.row_mut(i);
        match kind {
            CorruptionKind::GaussianNoise => {
                for (d, s) in dst.iter_mut().zip(img) {
                    *d = s + param * rng::normal(&mut r);
                }
            }
            CorruptionKind::BoxBlur => box_blur(img, side, param as usize, dst),
            CorruptionKind::Contrast => {
                let mean = img.iter().sum::<f64>() / img.len() as f64;
                for (d, s) in dst.iter_mut().zip(img) {
                    *d = (s - mean) * param + mean;
                }
            }
            CorruptionKind::Pixelate => pixelate(img, side, param as usize, dst),
        }
    }
    Ok(ds.with_inputs(out, Some(Corruption { kind, severity })))
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

/// Mean over a `(2r+1)^2` window with reflect padding.
pub fn box_blur(img: &[f64], side: usize, radius: usize, out: &mut [f64]) {
    let r = radius as isize;
    let area = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for oy in -r..=r {
                let yy = reflect(y as isize + oy, side);
                for ox in -r..=r {
                    acc += img[yy * side + reflect(x as isize + ox, side)];
                }
            }
            out[y * side + x] = acc / area;
        }
    }
}

/// Replaces each `block x block` tile (clipped at the border) by its mean.
pub fn pixelate(img: &[f64], side: usize, block: usize, out: &mut [f64]) {
    let block = block.max(1);
    for by in (0..side).step_by(block) {
        for bx in (0..side).step_by(block) {
            let ys = by..(by + block).min(side);
            let xs = bx..(bx + block).min(side);
            let count = (ys.len() * xs.len()) as f64;
            let mut acc = 0.0;
            for y in ys.clone() {
                for x in xs.clone() {
                    acc += img[y * side + x];
                }
            }
            let mean = acc / count;
            for y in ys.clone() {
                for x in xs.clone() {
                    out[y * side + x] = mean;
                }
            }
        }
    }
}

/// Indices 0, 2, 4, ... and 1, 3, 5, ... of the stored order. The odd half is
/// empty for single-sample datasets; consumers report that as `EmptySplit`.
pub fn split_even_odd<D: Samples>(ds: &D) -> (D, D) {
    let n = ds.inputs().rows();
    let even: Vec<usize> = (0..n).step_by(2).collect();
    let odd: Vec<usize> = (1..n).step_by(2).collect();
    (ds.select(&even), ds.select(&odd))
}
