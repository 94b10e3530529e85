//! Checkpoint format: one JSON header line `{"names": [...], "shapes":
//! [...], ...}` terminated by `\n`, followed by every tensor's values as
//! little-endian `f64` in name order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    /// Free-form metadata (model config, training step, normalisation).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            names: self.names.clone(),
            shapes: self.tensors.iter().map(|t| t.shape().to_vec()).collect(),
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse("checkpoint", "missing header terminator"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..split]).map_err(|e| Error::parse("checkpoint header", e))?;
        if header.names.len() != header.shapes.len() {
            return Err(Error::parse("checkpoint header", "names and shapes differ in length"));
        }
        let body = &bytes[split + 1..];
        let total: usize = header.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if body.len() != total * 8 {
            return Err(Error::parse(
                "checkpoint body",
                format!("expected {} bytes, found {}", total * 8, body.len()),
            ));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let tensors = header
            .shapes
            .iter()
            .map(|shape| {
                let n = shape.iter().product();
                Tensor::from_vec(shape, values.by_ref().take(n).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            names: header.names,
            tensors,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint {
            names: vec!["a".into(), "b".into()],
            tensors: vec![
                Tensor::from_vec(&[2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
                Tensor::from_vec(&[3], vec![1.0 / 3.0, -2.5, 7.0]).unwrap(),
            ],
            meta: serde_json::json!({"step": 3}),
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.names, ck.names);
        assert_eq!(back.meta, ck.meta);
        for (a, b) in back.tensors.iter().zip(&ck.tensors) {
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn truncated_body_is_rejected() {
        let ck = Checkpoint {
            names: vec!["a".into()],
            tensors: vec![Tensor::zeros(&[4])],
            meta: serde_json::Value::Null,
        };
        let mut bytes = ck.to_bytes();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"{}").is_err());
    }
}
