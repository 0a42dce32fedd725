//! Checkpoint files: `SOUPCKPT` framing, a header holding the metadata and a
//! name-sorted tensor table, then the raw little-endian f32 data.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};
use soupkit_core::{CheckpointMeta, Role, Tensor, TensorSet};

use crate::container::{self, field, u64_field};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SOUPCKPT";

const META_KEYS: [&str; 5] = ["role", "lineage", "seed", "hyperparams", "format_version"];

pub fn meta_to_json(meta: &CheckpointMeta) -> Result<Value> {
    let mut map = Map::new();
    for (k, raw) in &meta.extra {
        map.insert(k.clone(), serde_json::from_str(raw)?);
    }
    map.insert("role".into(), json!(meta.role.as_str()));
    map.insert("lineage".into(), json!(meta.lineage));
    map.insert("seed".into(), json!(meta.seed));
    map.insert("hyperparams".into(), json!(meta.hyperparams));
    map.insert("format_version".into(), json!(meta.format_version));
    Ok(Value::Object(map))
}

pub fn meta_from_json(value: &Value) -> Result<CheckpointMeta> {
    let bad = |what: &str| Error::HeaderMismatch(format!("meta: {what}"));
    let obj = value.as_object().ok_or_else(|| bad("not an object"))?;
    let role = field(value, "role")?.as_str().and_then(Role::parse).ok_or_else(|| bad("unknown role"))?;
    let lineage = field(value, "lineage")?
        .as_array()
        .ok_or_else(|| bad("lineage is not a list"))?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| bad("lineage entry is not a string")))
        .collect::<Result<Vec<_>>>()?;
    let hyperparams: BTreeMap<String, String> = serde_json::from_value(field(value, "hyperparams")?.clone())?;
    let format_version =
        u32::try_from(u64_field(value, "format_version")?).map_err(|_| bad("format_version overflows"))?;
    if format_version != soupkit_core::tensor::FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(format_version));
    }
    let extra =
        obj.iter().filter(|(k, _)| !META_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.to_string())).collect();
    Ok(CheckpointMeta { role, lineage, seed: u64_field(value, "seed")?, hyperparams, format_version, extra })
}

fn validate(params: &TensorSet) -> Result<()> {
    params.validate().map_err(|e| match e {
        soupkit_core::Error::InvalidTensor { name, reason } => Error::InvalidTensor { name, reason },
        other => other.into(),
    })
}

/// Serialized checkpoint. The same inputs always give the same bytes.
pub fn encode_checkpoint(params: &TensorSet, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    validate(params)?;
    let mut table = Vec::with_capacity(params.len());
    let mut offset = 0usize;
    for (name, t) in params.iter() {
        let nbytes = 4 * t.len();
        table.push(json!({ "name": name, "dtype": "f32", "shape": t.shape(), "offset": offset, "nbytes": nbytes }));
        offset += nbytes;
    }
    let header = json!({ "meta": meta_to_json(meta)?, "tensors": table });
    let payload = container::f32_bytes(params.iter().flat_map(|(_, t)| t.data().iter().copied()));
    Ok(container::frame(MAGIC, &header, &payload))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(TensorSet, CheckpointMeta)> {
    let (header, payload) = container::unframe(MAGIC, bytes)?;
    let meta = meta_from_json(field(&header, "meta")?)?;
    let entries =
        field(&header, "tensors")?.as_array().ok_or_else(|| Error::HeaderMismatch("`tensors` is not a list".into()))?;
    let mut params = TensorSet::new();
    let mut expected_offset = 0u64;
    let mut previous: Option<String> = None;
    for entry in entries {
        let name = field(entry, "name")?
            .as_str()
            .ok_or_else(|| Error::HeaderMismatch("tensor name is not a string".into()))?
            .to_string();
        if previous.as_ref().is_some_and(|p| *p >= name) {
            return Err(Error::HeaderMismatch(format!("tensor `{name}` out of order or duplicated")));
        }
        if field(entry, "dtype")?.as_str() != Some("f32") {
            return Err(Error::HeaderMismatch(format!("tensor `{name}` has an unsupported dtype")));
        }
        let shape: Vec<usize> = serde_json::from_value(field(entry, "shape")?.clone())?;
        let (offset, nbytes) = (u64_field(entry, "offset")?, u64_field(entry, "nbytes")?);
        let count = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        if count.and_then(|c| c.checked_mul(4)) != Some(nbytes) {
            return Err(Error::HeaderMismatch(format!(
                "tensor `{name}`: {nbytes} bytes disagree with shape {shape:?}"
            )));
        }
        if offset != expected_offset {
            return Err(Error::HeaderMismatch(format!("tensor `{name}` is not contiguous")));
        }
        let end = offset + nbytes;
        if end > payload.len() as u64 {
            return Err(Error::HeaderMismatch(format!("data section ends inside tensor `{name}`")));
        }
        let data = container::read_f32(&payload[offset as usize..end as usize]);
        let tensor =
            Tensor::new(shape, data).map_err(|e| Error::InvalidTensor { name: name.clone(), reason: e.to_string() })?;
        params.insert(name.clone(), tensor);
        expected_offset = end;
        previous = Some(name);
    }
    if expected_offset != payload.len() as u64 {
        return Err(Error::HeaderMismatch(format!(
            "header describes {expected_offset} data bytes, file holds {}",
            payload.len()
        )));
    }
    validate(&params)?;
    Ok((params, meta))
}

/// Writes a checkpoint; fails on non-finite values before touching the file.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &TensorSet, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode_checkpoint(params, meta)?;
    container::write_file(path.as_ref(), &bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TensorSet, CheckpointMeta)> {
    decode_checkpoint(&container::read_file(path.as_ref())?)
}
