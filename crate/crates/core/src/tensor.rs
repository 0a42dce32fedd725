//! Named parameter tensors: the unit that is trained, mixed, saved and loaded.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::hash_bytes;

/// A dense f32 tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidTensor {
                name: String::new(),
                reason: format!("shape {shape:?} has a zero dimension"),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor {
                name: String::new(),
                reason: format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: alloc::vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Ordered map from tensor name to tensor. Iteration order is the canonical
/// (lexicographic byte) order used by serialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorSet {
    entries: BTreeMap<String, Tensor>,
}

impl TensorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Checks the finiteness invariant; names the first offending tensor.
    pub fn validate(&self) -> Result<()> {
        for (name, t) in &self.entries {
            if name.is_empty() || !name.is_ascii() {
                return Err(Error::InvalidTensor {
                    name: name.clone(),
                    reason: "tensor names must be non-empty ASCII".to_string(),
                });
            }
            if !t.is_finite() {
                return Err(Error::InvalidTensor { name: name.clone(), reason: "non-finite value".to_string() });
            }
        }
        Ok(())
    }

    /// Keeps only the tensors whose name satisfies `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&str) -> bool) -> TensorSet {
        TensorSet {
            entries: self.entries.iter().filter(|(k, _)| keep(k)).map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    /// Content hash over names, shapes and value bits, formatted as 16 hex digits.
    /// Used as the checkpoint ID in lineage records.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(self.num_params() * 4 + 64 * self.len());
        for (name, t) in &self.entries {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
            for &d in &t.shape {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        format!("{:016x}", hash_bytes(&bytes))
    }
}

impl FromIterator<(String, Tensor)> for TensorSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self { entries: iter.into_iter().collect() }
    }
}

/// Succeeds iff every set has the same names with the same per-name shapes as the first.
pub fn assert_compatible(sets: &[&TensorSet]) -> Result<()> {
    let Some((first, rest)) = sets.split_first() else {
        return Err(Error::InvalidConfig("assert_compatible needs at least one set".to_string()));
    };
    for other in rest {
        for (name, t) in first.iter() {
            match other.get(name) {
                None => return Err(Error::shape(name, "missing in one of the sets")),
                Some(o) if o.shape() != t.shape() => {
                    return Err(Error::shape(name, format!("{:?} vs {:?}", t.shape(), o.shape())));
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = other.names().find(|n| !first.contains(n)) {
            return Err(Error::shape(extra, "missing in one of the sets"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Stock,
    InterTrained,
    FineTuned,
    Soup,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Stock => "stock",
            Role::InterTrained => "inter_trained",
            Role::FineTuned => "fine_tuned",
            Role::Soup => "soup",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "stock" => Role::Stock,
            "inter_trained" => Role::InterTrained,
            "fine_tuned" => Role::FineTuned,
            "soup" => Role::Soup,
            _ => return None,
        })
    }
}

pub const FORMAT_VERSION: u32 = 1;

/// Provenance stored alongside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub role: Role,
    /// Fingerprints of the parent checkpoints.
    pub lineage: Vec<String>,
    pub seed: u64,
    pub hyperparams: BTreeMap<String, String>,
    pub format_version: u32,
    /// Unrecognised header keys, kept as raw JSON text so they survive a round trip.
    pub extra: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn new(role: Role, seed: u64) -> Self {
        Self {
            role,
            lineage: Vec::new(),
            seed,
            hyperparams: BTreeMap::new(),
            format_version: FORMAT_VERSION,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.lineage.push(parent.into());
        self
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.hyperparams.insert(key.into(), value.to_string());
        self
    }

    /// A checkpoint may not list itself (or the same parent twice) as a parent.
    pub fn check_lineage(&self, own_id: &str) -> Result<()> {
        if self.lineage.iter().any(|p| p == own_id) {
            return Err(Error::InvalidConfig(format!("checkpoint {own_id} lists itself as parent")));
        }
        let mut seen: Vec<&String> = self.lineage.iter().collect();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("duplicate parent in lineage".to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn set(entries: &[(&str, Vec<usize>)]) -> TensorSet {
        entries.iter().map(|(n, s)| ((*n).to_string(), Tensor::zeros(s.clone()))).collect()
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn validate_flags_nan() {
        let mut s = TensorSet::new();
        s.insert("w", Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap());
        assert!(matches!(s.validate(), Err(Error::InvalidTensor { name, .. }) if name == "w"));
    }

    #[test]
    fn compatible_copies() {
        let a = set(&[("w", vec![2]), ("b", vec![1])]);
        assert!(assert_compatible(&[&a, &a.clone()]).is_ok());
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let a = set(&[("w", vec![2])]);
        let b = set(&[("w", vec![2, 1])]);
        assert_eq!(assert_compatible(&[&a, &b]), Err(Error::shape("w", "[2] vs [2, 1]")));
    }

    #[test]
    fn extra_name_is_reported_both_ways() {
        let a = set(&[("w", vec![2])]);
        let b = set(&[("w", vec![2]), ("v", vec![1])]);
        assert!(assert_compatible(&[&a, &b]).is_err());
        assert!(assert_compatible(&[&b, &a]).is_err());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let a = set(&[("w", vec![2])]);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.get_mut("w").unwrap().data_mut()[0] = 1.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn lineage_cycle_rejected() {
        let m = CheckpointMeta::new(Role::Soup, 0).with_parent("aa");
        assert!(m.check_lineage("aa").is_err());
        assert!(m.check_lineage("bb").is_ok());
    }
}
