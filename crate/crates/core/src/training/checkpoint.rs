//! Binary checkpoint: magic, `u32` version, `u64` header length, a JSON header with
//! names, shapes and byte offsets, then every tensor as little-endian `f32`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{MsnetError, Result};
use crate::losses::LOSS_REDUCTION;
use crate::networks::{param_shapes, NetworkConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub params: ModelParams,
    /// Completed reproduction steps.
    pub step: u64,
    /// Completed predictor steps.
    pub predictor_step: u64,
    pub optimizers: BTreeMap<String, Adam>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    config: AdamConfig,
    t: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    loss_reduction: String,
    network: NetworkConfig,
    train: TrainConfig,
    step: u64,
    predictor_step: u64,
    optimizers: BTreeMap<String, OptimizerHeader>,
    tensors: Vec<TensorEntry>,
}

fn tensors_of(ckpt: &Checkpoint) -> Vec<(String, &Tensor<f32>)> {
    let mut out: Vec<(String, &Tensor<f32>)> = ckpt
        .params
        .iter()
        .map(|(k, v)| (format!("params/{k}"), v))
        .collect();
    for (group, opt) in &ckpt.optimizers {
        for (k, v) in opt.m.iter() {
            out.push((format!("optim/{group}/m/{k}"), v));
        }
        for (k, v) in opt.v.iter() {
            out.push((format!("optim/{group}/v/{k}"), v));
        }
    }
    out
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = tensors_of(ckpt);
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.numel() as u64;
            e
        })
        .collect();
    let header = Header {
        loss_reduction: LOSS_REDUCTION.into(),
        network: ckpt.network.clone(),
        train: ckpt.train.clone(),
        step: ckpt.step,
        predictor_step: ckpt.predictor_step,
        optimizers: ckpt
            .optimizers
            .iter()
            .map(|(k, o)| {
                (
                    k.clone(),
                    OptimizerHeader {
                        config: o.config,
                        t: o.t,
                    },
                )
            })
            .collect(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| MsnetError::io(d, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| MsnetError::io(path, e))
}

fn corrupt(m: impl Into<String>) -> MsnetError {
    MsnetError::CorruptCheckpoint(m.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(MsnetError::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let data_start = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..data_start])
        .map_err(|e| corrupt(format!("header: {e}")))?;
    if header.loss_reduction != LOSS_REDUCTION {
        return Err(corrupt(format!(
            "loss reduction {:?}, expected {LOSS_REDUCTION:?}",
            header.loss_reduction
        )));
    }
    let data = &bytes[data_start..];
    let mut expected_end = 0u64;
    let mut params = ModelParams::new();
    let mut optimizers: BTreeMap<String, Adam> = header
        .optimizers
        .iter()
        .map(|(k, o)| {
            let mut a = Adam::new(o.config);
            a.t = o.t;
            (k.clone(), a)
        })
        .collect();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 4 * n;
        if e.offset != expected_end || end > data.len() {
            return Err(corrupt(format!("truncated or misplaced tensor {}", e.name)));
        }
        expected_end = end as u64;
        let values = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), values)?;
        if let Some(name) = e.name.strip_prefix("params/") {
            params.insert(name, t);
        } else if let Some(rest) = e.name.strip_prefix("optim/") {
            let mut parts = rest.splitn(3, '/');
            let (group, which, name) = match (parts.next(), parts.next(), parts.next()) {
                (Some(g), Some(w), Some(n)) => (g, w, n),
                _ => return Err(corrupt(format!("bad tensor name {}", e.name))),
            };
            let opt = optimizers
                .get_mut(group)
                .ok_or_else(|| corrupt(format!("unknown optimizer group {group}")))?;
            match which {
                "m" => opt.m.insert(name, t),
                "v" => opt.v.insert(name, t),
                _ => return Err(corrupt(format!("bad tensor name {}", e.name))),
            }
        } else {
            return Err(corrupt(format!("bad tensor name {}", e.name)));
        }
    }
    if expected_end as usize != data.len() {
        return Err(corrupt("trailing bytes after tensor data"));
    }
    header.network.validate()?;
    let shapes = param_shapes(&header.network);
    if shapes.len() != params.len() {
        return Err(corrupt(format!(
            "{} parameter tensors, network config needs {}",
            params.len(),
            shapes.len()
        )));
    }
    for (name, shape) in shapes {
        let t = params
            .get(&name)
            .map_err(|_| corrupt(format!("missing parameter {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(corrupt(format!(
                "parameter {name} has shape {:?}, config implies {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(Checkpoint {
        network: header.network,
        train: header.train,
        params,
        step: header.step,
        predictor_step: header.predictor_step,
        optimizers,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| MsnetError::io(path, e))?;
    decode_checkpoint(&bytes)
}
