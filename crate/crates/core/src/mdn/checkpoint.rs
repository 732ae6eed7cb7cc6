//! Checkpoint files: one line of JSON header terminated by `\n`, then the
//! parameters as little-endian `f32` in `ModelParams::flatten` order
//! (per layer, trunk first: input-major weights, then biases).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::ModelConfig;
use crate::error::{Error, Result};

const FORMAT: &str = "mdpval-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub loss_curve: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerShape {
    name: String,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    seed: u64,
    param_count: usize,
    layout: Vec<LayerShape>,
    loss_curve: Vec<f64>,
}

pub fn save_checkpoint(
    params: &ModelParams<f32>,
    loss_curve: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let shapes = params.config.layer_shapes();
    let n = shapes.len();
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        config: params.config.clone(),
        seed: params.config.seed,
        param_count: params.config.param_count(),
        layout: shapes
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| LayerShape {
                name: if i + 1 == n {
                    "output".into()
                } else {
                    format!("hidden_{}", i + 1)
                },
                fan_in,
                fan_out,
            })
            .collect(),
        loss_curve: loss_curve.to_vec(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for v in params.flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing header", path.display())))?;
    let header: Header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let expected = header.config.param_count();
    let block = &bytes[split + 1..];
    if header.param_count != expected || block.len() != expected * 4 {
        return Err(Error::Checkpoint(format!(
            "{}: parameter block holds {} bytes, config needs {} floats",
            path.display(),
            block.len(),
            expected
        )));
    }
    let flat: Vec<f32> = block
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let params = ModelParams::from_flat(&header.config, &flat)
        .ok_or_else(|| Error::Checkpoint("parameter count mismatch".into()))?;
    Ok(Checkpoint {
        params,
        loss_curve: header.loss_curve,
    })
}

/// Load and check the stored shapes against `expected`.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    expected: &ModelConfig,
) -> Result<Checkpoint> {
    let path = path.as_ref();
    let ckpt = load_checkpoint(path)?;
    if !ckpt.params.config.same_shape(expected) {
        return Err(Error::Checkpoint(format!(
            "{}: stored model (d = {}, K = {}, hidden {:?}) does not match expected \
             (d = {}, K = {}, hidden {:?})",
            path.display(),
            ckpt.params.config.d,
            ckpt.params.config.num_components,
            ckpt.params.config.hidden_sizes,
            expected.d,
            expected.num_components,
            expected.hidden_sizes
        )));
    }
    Ok(ckpt)
}
