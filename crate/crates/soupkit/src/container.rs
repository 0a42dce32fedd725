//! Shared framing of the binary files: 8 magic bytes, a little-endian u32
//! version, a u64 header length, the UTF-8 JSON header, then the payload.

use serde_json::Value;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

pub fn frame(magic: &'static [u8; 8], header: &Value, payload: &[u8]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("JSON values always serialize");
    let mut out = Vec::with_capacity(PREFIX + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    out
}

/// Splits a file into its parsed header and raw payload.
pub fn unframe<'a>(magic: &'static [u8; 8], bytes: &'a [u8]) -> Result<(Value, &'a [u8])> {
    let expected = std::str::from_utf8(magic).expect("magic is ASCII");
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(Error::BadMagic { expected });
    }
    if bytes.len() < PREFIX {
        return Err(Error::HeaderMismatch("file ends inside the fixed prefix".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let end = usize::try_from(header_len)
        .ok()
        .and_then(|l| PREFIX.checked_add(l))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::HeaderMismatch(format!("header of {header_len} bytes exceeds the file")))?;
    let header = serde_json::from_slice(&bytes[PREFIX..end])?;
    Ok((header, &bytes[end..]))
}

pub fn f32_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn read_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()
}

pub fn field<'a>(header: &'a Value, key: &str) -> Result<&'a Value> {
    header.get(key).ok_or_else(|| Error::HeaderMismatch(format!("header lacks `{key}`")))
}

pub fn u64_field(header: &Value, key: &str) -> Result<u64> {
    field(header, key)?.as_u64().ok_or_else(|| Error::HeaderMismatch(format!("`{key}` is not an unsigned integer")))
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
