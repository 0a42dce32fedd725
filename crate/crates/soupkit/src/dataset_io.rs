//! Dataset files: `SOUPDATA` framing, a JSON header, f32 inputs in row-major
//! order, then one little-endian i32 label per sample when labels are present.
//!
//! Inputs are stored at f32 precision, so a loaded dataset equals the one that
//! was saved only up to that rounding.

use std::path::Path;

use serde_json::{json, Value};
use soupkit_core::data::{Corruption, CorruptionKind, LabeledDataset, Split, UnlabeledDataset};
use soupkit_core::Matrix;

use crate::container::{self, field, u64_field};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SOUPDATA";

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetFile {
    Labeled(LabeledDataset),
    Unlabeled(UnlabeledDataset),
}

impl DatasetFile {
    pub fn inputs(&self) -> &Matrix {
        match self {
            DatasetFile::Labeled(d) => &d.inputs,
            DatasetFile::Unlabeled(d) => &d.inputs,
        }
    }
}

fn corruption_json(c: Option<Corruption>) -> Value {
    c.map_or(Value::Null, |c| json!({ "kind": c.kind.as_str(), "severity": c.severity }))
}

fn corruption_from(v: &Value) -> Result<Option<Corruption>> {
    if v.is_null() {
        return Ok(None);
    }
    let kind = field(v, "kind")?
        .as_str()
        .and_then(CorruptionKind::parse)
        .ok_or_else(|| Error::HeaderMismatch("unknown corruption kind".into()))?;
    let severity =
        u8::try_from(u64_field(v, "severity")?).map_err(|_| Error::HeaderMismatch("severity out of range".into()))?;
    Ok(Some(Corruption { kind, severity }))
}

pub fn encode_dataset(ds: &DatasetFile) -> Vec<u8> {
    let inputs = ds.inputs();
    let mut header = json!({
        "n": inputs.rows(),
        "input_dim": inputs.cols(),
        "labels": matches!(ds, DatasetFile::Labeled(_)),
    });
    let mut payload = container::f32_bytes(inputs.data().iter().map(|&v| v as f32));
    match ds {
        DatasetFile::Labeled(d) => {
            header["num_classes"] = json!(d.num_classes);
            header["corruption"] = corruption_json(d.corruption);
            header["seed"] = json!(d.seed);
            header["split"] = json!(d.split.as_str());
            payload.extend(d.labels.iter().flat_map(|&l| (l as i32).to_le_bytes()));
        }
        DatasetFile::Unlabeled(d) => {
            header["num_classes"] = Value::Null;
            header["corruption"] = corruption_json(d.corruption);
            header["source"] = json!(d.source);
        }
    }
    container::frame(MAGIC, &header, &payload)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetFile> {
    let (header, payload) = container::unframe(MAGIC, bytes)?;
    let n = u64_field(&header, "n")? as usize;
    let dim = u64_field(&header, "input_dim")? as usize;
    let labeled =
        field(&header, "labels")?.as_bool().ok_or_else(|| Error::HeaderMismatch("`labels` is not a boolean".into()))?;
    let input_bytes = n
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::HeaderMismatch("dataset size overflows".into()))?;
    let expected = input_bytes + if labeled { 4 * n } else { 0 };
    if payload.len() != expected {
        return Err(Error::HeaderMismatch(format!(
            "header describes {expected} data bytes, file holds {}",
            payload.len()
        )));
    }
    let values = container::read_f32(&payload[..input_bytes]);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidTensor { name: "inputs".into(), reason: format!("non-finite value at index {i}") });
    }
    let inputs = Matrix::new(n, dim, values.into_iter().map(f64::from).collect())?;
    let corruption = corruption_from(field(&header, "corruption")?)?;
    if !labeled {
        let source = field(&header, "source")?.as_str().unwrap_or_default().to_string();
        return Ok(DatasetFile::Unlabeled(UnlabeledDataset { inputs, source, corruption }));
    }
    let labels = payload[input_bytes..]
        .chunks_exact(4)
        .map(|c| {
            let l = i32::from_le_bytes(c.try_into().expect("4 bytes"));
            usize::try_from(l).map_err(|_| Error::HeaderMismatch(format!("negative label {l}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let num_classes = u64_field(&header, "num_classes")? as usize;
    let split = field(&header, "split")?
        .as_str()
        .and_then(Split::parse)
        .ok_or_else(|| Error::HeaderMismatch("unknown split".into()))?;
    let mut ds = LabeledDataset::new(inputs, labels, num_classes, split, u64_field(&header, "seed")?)?;
    ds.corruption = corruption;
    Ok(DatasetFile::Labeled(ds))
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &DatasetFile) -> Result<()> {
    container::write_file(path.as_ref(), &encode_dataset(ds))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetFile> {
    decode_dataset(&container::read_file(path.as_ref())?)
}
