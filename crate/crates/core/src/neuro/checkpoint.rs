//! `IQNN` checkpoint: little-endian binary parameters plus a JSON metadata
//! sidecar.
//!
//! Layout: magic `IQNN`, u32 format version, u32 input dim, u32 head count;
//! per head a u32 layer count; per layer u32 inputs, u32 outputs,
//! u8 activation (0 linear, 1 ReLU), f64 dropout, then `inputs·outputs`
//! row-major f64 weights and `outputs` f64 biases.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::model::{Activation, Dense, NetworkModel};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"IQNN";
const FORMAT_VERSION: u32 = 1;
const KIND: &str = "IQNN checkpoint";

/// Training provenance stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Target column name per head.
    pub heads: Vec<String>,
    pub layer_dims: Vec<usize>,
    pub param_count: usize,
    pub config: TrainConfig,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    /// Input standardization fitted on the training rows, if any.
    #[serde(default)]
    pub feature_scaling: Option<FeatureScaling>,
    /// Free-form provenance (command line, seeds, input files).
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// Per-feature affine standardization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaling {
    /// Column means and standard deviations of `x`; constant columns get
    /// scale 1.
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::invalid("cannot fit feature scaling on zero rows"));
        }
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &mut Array2<f64>) -> Result<()> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} features, scaling fitted on {}",
                x.ncols(),
                self.mean.len()
            )));
        }
        for mut row in x.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// Sidecar path: `model.iqnn` → `model.iqnn.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_checkpoint<T: Scalar, W: Write>(model: &NetworkModel<T>, mut w: W) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    let mut buf = Vec::with_capacity(16 + model.param_count() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.input_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.head_count() as u32).to_le_bytes());
    for h in 0..model.head_count() {
        let layers = model.head(h);
        buf.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for layer in layers {
            buf.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
            buf.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
            buf.push(match layer.activation() {
                Activation::Linear => 0,
                Activation::Relu => 1,
            });
            buf.extend_from_slice(&layer.dropout().to_le_bytes());
            for v in layer.weights().iter().chain(layer.bias().iter()) {
                buf.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                kind: KIND,
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fail(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Format {
            kind: KIND,
            offset: at as u64,
            message: message.into(),
        }
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<NetworkModel<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(c.fail(0, "bad magic, expected IQNN"));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(c.fail(4, format!("unsupported version {version}")));
    }
    let input_dim = c.u32("input dim")? as usize;
    let head_count = c.u32("head count")? as usize;
    if input_dim == 0 || head_count == 0 {
        return Err(c.fail(8, "input dim and head count must be positive"));
    }
    let mut heads = Vec::with_capacity(head_count.min(1024));
    for h in 0..head_count {
        let n_layers = c.u32("layer count")? as usize;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for l in 0..n_layers {
            let at = c.pos;
            let inputs = c.u32("layer inputs")? as usize;
            let outputs = c.u32("layer outputs")? as usize;
            let activation = match c.take(1, "activation")?[0] {
                0 => Activation::Linear,
                1 => Activation::Relu,
                other => return Err(c.fail(at + 8, format!("unknown activation code {other}"))),
            };
            let dropout = c.f64("dropout")?;
            let need = inputs
                .checked_mul(outputs)
                .and_then(|n| n.checked_add(outputs))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| c.fail(at, "layer size overflows"))?;
            let raw = c.take(need, "layer parameters")?;
            let vals: Vec<T> = raw
                .chunks_exact(8)
                .map(|b| T::from_f64(f64::from_le_bytes(b.try_into().unwrap())).unwrap())
                .collect();
            let weights = Array2::from_shape_vec((inputs, outputs), vals[..inputs * outputs].to_vec())
                .map_err(|e| c.fail(at, e.to_string()))?;
            let bias = Array1::from_vec(vals[inputs * outputs..].to_vec());
            let layer = Dense::new(weights, bias, activation, dropout)
                .map_err(|e| c.fail(at, format!("head {h} layer {l}: {e}")))?;
            layers.push(layer);
        }
        heads.push(layers);
    }
    if c.pos != bytes.len() {
        return Err(c.fail(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    NetworkModel::from_heads(input_dim, heads)
}

/// Writes the checkpoint and its metadata sidecar.
pub fn save_model<T: Scalar>(model: &NetworkModel<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, std::io::BufWriter::new(f))?;
    let side = meta_path(path);
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

/// Reads a checkpoint and, when present, its metadata sidecar.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(NetworkModel<T>, Option<CheckpointMeta>)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let model = read_checkpoint(std::io::BufReader::new(f)).map_err(|e| e.context(path.display().to_string()))?;
    let side = meta_path(path);
    let meta = if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    Ok((model, meta))
}
