//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "VIREID\0\x01"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON:
//!              { "format_version": 1, "kind": "...", "metadata": {...},
//!                "tensors": [ { "path": "...", "shape": [..] }, ... ] }
//! data         every tensor's f64 values in header order, row-major
//! ```
//!
//! Values are stored as raw IEEE-754 doubles so a write/read round trip is
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use super::params::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VIREID\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    path: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn encode(kind: &str, metadata: &serde_json::Value, tensors: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        metadata: metadata.clone(),
        tensors: tensors
            .iter()
            .map(|(p, t)| TensorEntry {
                path: p.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * tensors.values().map(|t| t.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors.values() {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Container> {
    let bad = |msg: &str| Error::Load(format!("{}: {msg}", origin.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a parameter archive (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + header_len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| bad(&format!("corrupt header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let mut offset = 16 + header_len;
    let mut tensors = BTreeMap::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = bytes
            .get(offset..offset + 8 * n)
            .ok_or_else(|| bad(&format!("truncated data for {}", entry.path)))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += 8 * n;
        let t = Tensor::from_shape_vec(IxDyn(&entry.shape), values).expect("size checked");
        tensors.insert(entry.path, t);
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok(Container {
        kind: header.kind,
        metadata: header.metadata,
        tensors,
    })
}

pub fn write(
    path: &Path,
    kind: &str,
    metadata: &serde_json::Value,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path")));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes = encode(kind, metadata, tensors);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Container> {
    if path.as_os_str().is_empty() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path")));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 1..40), cols in 1usize..5) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let t = Tensor::from_shape_vec(IxDyn(&[rows, cols]), values[..rows * cols].to_vec()).unwrap();
            let mut map = BTreeMap::new();
            map.insert("a.weight".to_string(), t.clone());
            map.insert("b".to_string(), Tensor::zeros(IxDyn(&[0])));
            let meta = serde_json::json!({"k": 1});
            let bytes = encode("model", &meta, &map);
            let back = decode(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(back.kind.as_str(), "model");
            let got: Vec<u64> = back.tensors["a.weight"].iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = t.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        assert!(decode(b"not an archive at all", Path::new("x")).is_err());
        let mut map = BTreeMap::new();
        map.insert("w".to_string(), Tensor::zeros(IxDyn(&[3])));
        let bytes = encode("model", &serde_json::Value::Null, &map);
        assert!(decode(&bytes[..bytes.len() - 4], Path::new("x")).is_err());
    }

    #[test]
    fn empty_path_is_io_error() {
        let err = read(Path::new("")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
