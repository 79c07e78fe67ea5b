//! Binary checkpoint format for `UNet<f32>`.
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"CKMUNET\0"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      4     header length H in bytes, u32 little-endian
//! 16      H     UTF-8 JSON header:
//!                 {"config": UNetConfig, "meta": <any JSON>,
//!                  "tensors": [{"name": str, "shape": [n, c, h, w]}, ...]}
//! 16+H    ...   f32 little-endian values of every tensor, in header order,
//!               each tensor row-major NCHW; no padding between tensors
//! ```
//!
//! `meta` is opaque to this module; the training pipeline stores its
//! effective configuration there.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::{Shape4, Tensor4};
use crate::unet::{UNet, UNetConfig};

pub const MAGIC: &[u8; 8] = b"CKMUNET\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: UNetConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorHeader>,
}

pub fn to_bytes(model: &UNet<f32>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config().clone(),
        meta: meta.clone(),
        tensors: model
            .params()
            .map(|p| TensorHeader {
                name: p.name.clone(),
                shape: p.value.shape().dims(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + model.count_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(UNet<f32>, serde_json::Value)> {
    let err = |m: &str| NnError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(err("not a UNet checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes.get(16..16 + hlen).ok_or_else(|| err("truncated header"))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| NnError::Checkpoint(e.to_string()))?;

    let mut payload = &bytes[16 + hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let [n, c, h, w] = t.shape;
        let shape = Shape4::new(n, c, h, w);
        let nbytes = shape.len() * 4;
        if payload.len() < nbytes {
            return Err(NnError::Checkpoint(format!("truncated data for `{}`", t.name)));
        }
        let (chunk, rest) = payload.split_at(nbytes);
        payload = rest;
        let values = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor4::from_vec(shape, values)?);
    }
    if !payload.is_empty() {
        return Err(err("trailing bytes after tensor data"));
    }
    let mut model = UNet::build(header.config, 0)?;
    for (p, t) in model.params().zip(&header.tensors) {
        if p.name != t.name {
            return Err(NnError::Checkpoint(format!(
                "tensor order mismatch: expected `{}`, found `{}`",
                p.name, t.name
            )));
        }
    }
    model.load_values(tensors)?;
    if !model.is_finite() {
        return Err(err("non-finite parameter values"));
    }
    Ok((model, header.meta))
}

pub fn save(path: &Path, model: &UNet<f32>, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(path, to_bytes(model, meta)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(UNet<f32>, serde_json::Value)> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNet<f32> {
        UNet::build(UNetConfig { base_width: 2, ..UNetConfig::new(3, 3) }, 9).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small();
        let meta = serde_json::json!({"epochs": 3});
        let bytes = to_bytes(&m, &meta).unwrap();
        let (back, meta2) = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta2, meta);
        assert_eq!(to_bytes(&back, &meta2).unwrap(), bytes);
    }

    #[test]
    fn layout_prefix() {
        let bytes = to_bytes(&small(), &serde_json::Value::Null).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + hlen + small().count_params() * 4);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&small(), &serde_json::Value::Null).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
