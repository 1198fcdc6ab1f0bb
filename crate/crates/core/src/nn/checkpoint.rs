//! Binary checkpoint format.
//!
//! ```text
//! "OAAE"                 4 bytes magic
//! version                1 byte (currently 1)
//! manifest length        u32 little-endian
//! manifest               UTF-8 JSON: shapes, layer specs, parameter counts
//! parameters             f32 little-endian, networks in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::model::{ArchConfig, ModelBundle, Role};
use super::network::Network;
use super::tensor::Shape3;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OAAE";
pub const VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    image_shape: Shape3,
    num_classes: usize,
    arch: ArchConfig,
    networks: Vec<NetworkEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    input_shape: Shape3,
    layers: Vec<LayerSpec>,
    param_count: usize,
}

pub fn to_bytes(model: &ModelBundle) -> Vec<u8> {
    let manifest = Manifest {
        image_shape: model.image_shape,
        num_classes: model.num_classes,
        arch: model.arch.clone(),
        networks: Role::ALL
            .iter()
            .map(|&r| {
                let net = model.network(r);
                NetworkEntry {
                    name: net.name().to_string(),
                    input_shape: net.input_shape(),
                    layers: net.layers().to_vec(),
                    param_count: net.param_count(),
                }
            })
            .collect(),
    };
    let header = serde_json::to_vec(&manifest).expect("manifest serializes");
    let total: usize = Role::ALL
        .iter()
        .map(|&r| model.network(r).param_count())
        .sum();
    let mut out = Vec::with_capacity(9 + header.len() + 4 * total);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for role in Role::ALL {
        for v in model.network(role).params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ModelBundle> {
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(bad("missing OAAE magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported format version {}", bytes[4])));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let header = bytes
        .get(9..9 + header_len)
        .ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(header).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.networks.len() != Role::ALL.len() {
        return Err(bad(format!(
            "expected 5 networks, found {}",
            manifest.networks.len()
        )));
    }

    let mut model = ModelBundle::new(
        manifest.image_shape,
        manifest.num_classes,
        manifest.arch.clone(),
        0,
    )
    .map_err(|e| bad(e.to_string()))?;
    let mut cursor = 9 + header_len;
    for (role, entry) in Role::ALL.into_iter().zip(&manifest.networks) {
        if entry.name != role.name() {
            return Err(bad(format!(
                "expected network {}, found {}",
                role.name(),
                entry.name
            )));
        }
        let mut net = Network::new(entry.name.clone(), entry.input_shape, entry.layers.clone())
            .map_err(|e| bad(format!("{}: {e}", entry.name)))?;
        if net.param_count() != entry.param_count {
            return Err(bad(format!("{}: parameter count mismatch", entry.name)));
        }
        let end = cursor + 4 * entry.param_count;
        let raw = bytes
            .get(cursor..end)
            .ok_or_else(|| bad(format!("{}: truncated parameters", entry.name)))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        net.set_params(&values)?;
        *model.network_mut(role) = net;
        cursor = end;
    }
    if cursor != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - cursor)));
    }
    Ok(model)
}

pub fn save(model: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = ModelBundle::new(Shape3::new(1, 16, 16), 3, ArchConfig::default(), 4).unwrap();
        let bytes = to_bytes(&model);
        let back = from_bytes(&bytes, Path::new("mem")).unwrap();
        for role in Role::ALL {
            let a: Vec<u32> = model
                .network(role)
                .params()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            let b: Vec<u32> = back
                .network(role)
                .params()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(a, b);
        }
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corrupt_inputs() {
        let model = ModelBundle::new(Shape3::new(1, 16, 16), 2, ArchConfig::default(), 0).unwrap();
        let mut bytes = to_bytes(&model);
        assert!(from_bytes(&bytes[..bytes.len() - 3], Path::new("t")).is_err());
        bytes[0] = b'X';
        let err = from_bytes(&bytes, Path::new("broken.ckpt")).unwrap_err();
        assert!(err.to_string().contains("broken.ckpt"));
        assert!(err.to_string().contains("magic"));
    }
}
