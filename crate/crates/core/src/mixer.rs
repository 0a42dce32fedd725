//! Convex combinations of parameter sets, simplex grids and simplex sampling.
//!
//! All arithmetic is done in f64 and rounded to f32 once per scalar. The
//! per-scalar products are summed in sorted order, so jointly permuting
//! ingredients and weights never changes a single output bit.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{assert_compatible, Tensor, TensorSet};

/// Allowed deviation of the coefficient sum from one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::BadWeights("no coefficients".to_string()));
        }
        if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::BadWeights(format!("coefficient {bad} is not a non-negative number")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::BadWeights(format!("coefficients sum to {sum}")));
        }
        Ok(Self(w))
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m >= 1, "uniform weights need at least one ingredient");
        Self(alloc::vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, index: usize) -> Self {
        assert!(index < m, "one-hot index {index} out of range for {m} ingredients");
        let mut w = alloc::vec![0.0; m];
        w[index] = 1.0;
        Self(w)
    }

    /// `(1 - lambda, lambda)`.
    pub fn pair(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::BadWeights(format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(Self(alloc::vec![1.0 - lambda, lambda]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the single unit coefficient, if the weights are one-hot.
    pub fn one_hot_index(&self) -> Option<usize> {
        let mut hit = None;
        for (i, &v) in self.0.iter().enumerate() {
            if v == 1.0 && hit.is_none() {
                hit = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        hit
    }

    /// Index of the largest coefficient (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl AsRef<[f64]> for MixtureWeights {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `out[name][j] = sum_i w_i * ingredient_i[name][j]`.
pub fn mix(ingredients: &[&TensorSet], weights: &MixtureWeights) -> Result<TensorSet> {
    if ingredients.len() != weights.len() {
        return Err(Error::BadWeights(format!("{} weights for {} ingredients", weights.len(), ingredients.len())));
    }
    assert_compatible(ingredients)?;
    if let Some(i) = weights.one_hot_index() {
        return Ok(ingredients[i].clone());
    }

    let w = weights.as_slice();
    let mut products = Vec::with_capacity(w.len());
    let mut out = TensorSet::new();
    for (name, first) in ingredients[0].iter() {
        let sources: Vec<&[f32]> =
            ingredients.iter().map(|s| s.get(name).expect("checked by assert_compatible").data()).collect();
        let data: Vec<f32> = (0..first.len())
            .map(|j| {
                products.clear();
                products.extend(sources.iter().zip(w).map(|(src, &wi)| wi * f64::from(src[j])));
                sorted_sum(&mut products) as f32
            })
            .collect();
        out.insert(name, Tensor::new(first.shape().to_vec(), data)?);
    }
    Ok(out)
}

fn sorted_sum(values: &mut [f64]) -> f64 {
    // insertion sort: M is small
    for i in 1..values.len() {
        let mut j = i;
        while j > 0 && values[j - 1].total_cmp(&values[j]).is_gt() {
            values.swap(j - 1, j);
            j -= 1;
        }
    }
    values.iter().sum()
}

/// Points along the segment from `a` (lambda = 0) to `b` (lambda = 1).
pub fn interpolation_path(a: &TensorSet, b: &TensorSet, lambdas: &[f64]) -> Result<Vec<TensorSet>> {
    assert_compatible(&[a, b])?;
    if lambdas.windows(2).any(|p| p[0] > p[1]) {
        return Err(Error::BadWeights("lambdas must be sorted ascending".to_string()));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            if lambda == 0.0 {
                Ok(a.clone())
            } else if lambda == 1.0 {
                Ok(b.clone())
            } else {
                mix(&[a, b], &MixtureWeights::pair(lambda)?)
            }
        })
        .collect()
}

/// Resolution of a barycentric grid over the 3-ingredient simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplexGridSpec {
    pub num_ingredients: usize,
    pub resolution: usize,
}

impl SimplexGridSpec {
    pub fn triangle(resolution: usize) -> Self {
        Self { num_ingredients: 3, resolution }
    }
}

/// One small triangle of the subdivided simplex: three lattice vertices
/// `(a, b, c)` with `a + b + c = n`.
pub type Cell = [[usize; 3]; 3];

fn check_grid(spec: &SimplexGridSpec) -> Result<usize> {
    if spec.num_ingredients != 3 {
        return Err(Error::Unsupported(format!(
            "barycentric grids need exactly 3 ingredients, got {}",
            spec.num_ingredients
        )));
    }
    if spec.resolution == 0 {
        return Err(Error::InvalidConfig("grid resolution must be at least 1".to_string()));
    }
    Ok(spec.resolution)
}

/// Cell order shared by [`barycentric_cells`] and [`barycentric_centroid_grid`]:
/// rows bottom to top (apex weight `a` ascending); within a row, upward cells
/// by ascending `b`, then the downward cells by ascending `b`.
fn cell_order(n: usize) -> impl Iterator<Item = (bool, usize, usize)> {
    (1..=n).flat_map(move |row| {
        let up = (0..=n - row).map(move |b| (true, row, b));
        let down = (row < n).then(|| (0..n - row).map(move |b| (false, row + 1, b))).into_iter().flatten();
        up.chain(down)
    })
}

/// Lattice vertices of the `n^2` cells, in grid order.
pub fn barycentric_cells(spec: &SimplexGridSpec) -> Result<Vec<Cell>> {
    let n = check_grid(spec)?;
    Ok(cell_order(n)
        .map(|(up, a, b)| {
            let c = n - a - b;
            if up {
                [[a, b, c], [a - 1, b + 1, c], [a - 1, b, c + 1]]
            } else {
                [[a - 1, b + 1, c], [a - 1, b, c + 1], [a - 2, b + 1, c + 1]]
            }
        })
        .collect())
}

/// Centroids of the `n^2` cells of the n-fold subdivided triangle.
pub fn barycentric_centroid_grid(spec: &SimplexGridSpec) -> Result<Vec<MixtureWeights>> {
    let n = check_grid(spec)?;
    let denom = (3 * n) as f64;
    cell_order(n)
        .map(|(up, a, b)| {
            let c = n - a - b;
            let num = if up { [3 * a - 2, 3 * b + 1, 3 * c + 1] } else { [3 * a - 4, 3 * b + 2, 3 * c + 2] };
            MixtureWeights::new(num.iter().map(|&v| v as f64 / denom).collect())
        })
        .collect()
}

/// Dirichlet(1, ..., 1) draw: normalized unit-rate exponentials.
pub fn sample_simplex_uniform<R: RngCore + ?Sized>(m: usize, rng: &mut R) -> MixtureWeights {
    assert!(m >= 1, "simplex sampling needs m >= 1");
    let e: Vec<f64> = (0..m).map(|_| rng::exponential(rng)).collect();
    let total: f64 = e.iter().sum();
    MixtureWeights(e.into_iter().map(|v| v / total).collect())
}
