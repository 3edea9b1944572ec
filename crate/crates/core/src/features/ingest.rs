use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mlsp_concat, ActivationBlock, FeatureStore};
use crate::error::{Error, Result};

/// Name of the JSON sidecar describing the tensors in an activation directory.
pub const SHAPES_FILE: &str = "shapes.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Channels last, as most frameworks export.
    #[default]
    Hwc,
    Chw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockShape {
    #[serde(default)]
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl BlockShape {
    fn len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Layout of every `<image_id>.f32` file: the listed blocks stored back to
/// back as little-endian `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSidecar {
    #[serde(default)]
    pub layout: Layout,
    pub blocks: Vec<BlockShape>,
}

impl ShapeSidecar {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sidecar: Self = serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))?;
        if sidecar.blocks.is_empty() {
            return Err(Error::data(path, "no blocks listed"));
        }
        if let Some((i, b)) = sidecar.blocks.iter().enumerate().find(|(_, b)| b.len() == 0) {
            return Err(Error::data(path, format!("block {i} ({:?}) has a zero dimension", b.name)));
        }
        Ok(sidecar)
    }

    pub fn pooled_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.channels).sum()
    }

    /// Splits one image's raw tensor into blocks.
    pub fn blocks(&self, values: &[f32]) -> Result<Vec<ActivationBlock<f64>>> {
        let expected: usize = self.blocks.iter().map(BlockShape::len).sum();
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "tensor has {} values, shapes describe {expected}",
                values.len()
            )));
        }
        let mut offset = 0;
        self.blocks
            .iter()
            .map(|b| {
                let chunk: Vec<f64> = values[offset..offset + b.len()].iter().map(|&v| v as f64).collect();
                offset += b.len();
                match self.layout {
                    Layout::Chw => ActivationBlock::new(b.channels, b.height, b.width, chunk),
                    Layout::Hwc => ActivationBlock::from_hwc(b.height, b.width, b.channels, &chunk),
                }
            })
            .collect()
    }
}

/// Pools every `*.f32` tensor in `dir` (described by `shapes.json`) into an
/// MLSP store keyed by file stem, in file-name order.
pub fn ingest_activation_dir(dir: &Path) -> Result<FeatureStore> {
    let sidecar = ShapeSidecar::load(&dir.join(SHAPES_FILE))?;
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "f32"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::data(dir, "no .f32 activation files"));
    }
    let mut store = FeatureStore::new(sidecar.pooled_dim())?;
    for path in files {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::data(&path, format!("{} bytes is not a whole number of f32 values", bytes.len())));
        }
        let values: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let blocks = sidecar.blocks(&values).map_err(|e| Error::data(&path, e.to_string()))?;
        let pooled = mlsp_concat(&blocks)?.into_iter().map(|v| v as f32).collect();
        let id = path.file_stem().unwrap().to_string_lossy().into_owned();
        store.insert(id, pooled).map_err(|e| Error::data(&path, e.to_string()))?;
    }
    Ok(store)
}
