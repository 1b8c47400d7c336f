//! Binary checkpoint format for trained networks.
//!
//! Layout: magic `SALN`, version u32 (little-endian), u64 little-endian
//! JSON-metadata length, the JSON metadata (architecture, seeds, lambda,
//! normalization record), then each parameter tensor's raw f64
//! little-endian values in declaration order (per layer: weight, then
//! bias). Round-trips reproduce logits bitwise.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::network::{LayerSpec, Network};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SALN";
const VERSION: u32 = 1;

/// Metadata stored alongside the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

impl CheckpointMeta {
    pub fn for_network(net: &Network, seed: u64) -> Self {
        CheckpointMeta {
            input_shape: net.input_shape().to_vec(),
            layers: net.layers().to_vec(),
            seed,
            lambda: None,
            penalty: None,
            normalization: None,
        }
    }
}

/// Serializes the network and metadata to `path`.
pub fn save_checkpoint(net: &Network, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params() {
        for t in [p.weight.as_ref(), p.bias.as_ref()].into_iter().flatten() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut file = std::fs::File::create(path.as_ref())?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads a checkpoint back into a network (eval mode) plus its metadata.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::parse(0, "file too short for header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::parse(0, "bad magic (expected SALN)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::parse(
            4,
            format!("unsupported version {version} (expected {VERSION})"),
        ));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let params_at = 16 + json_len;
    if bytes.len() < params_at {
        return Err(Error::parse(16, "truncated metadata"));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..params_at])?;

    let mut net = Network::build(&meta.input_shape, &meta.layers, meta.seed)?;
    let mut offset = params_at;
    for li in 0..net.params().len() {
        for which in ["weight", "bias"] {
            let shape = {
                let p = &net.params()[li];
                let t = if which == "weight" { p.weight.as_ref() } else { p.bias.as_ref() };
                match t {
                    Some(t) => t.shape().to_vec(),
                    None => continue,
                }
            };
            let numel: usize = shape.iter().product();
            let end = offset + 8 * numel;
            if bytes.len() < end {
                return Err(Error::parse(
                    offset,
                    format!("truncated parameters for layer {li} {which}"),
                ));
            }
            let data: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::from_vec(shape, data)?;
            if which == "weight" {
                net.set_weight(li, tensor)?;
            } else {
                net.set_bias(li, tensor)?;
            }
            offset = end;
        }
    }
    if offset != bytes.len() {
        return Err(Error::parse(
            offset,
            format!("{} trailing bytes after parameters", bytes.len() - offset),
        ));
    }
    Ok((net, meta))
}
