//! Pooled feature vectors: global average pooling of activation blocks,
//! multi-level concatenation, and the `MLSP` feature-store format.

mod handcrafted;
mod ingest;
mod store;

pub use handcrafted::{extract_dataset, handcrafted_blocks, handcrafted_features, HANDCRAFTED_SCALES};
pub use ingest::{ingest_activation_dir, BlockShape, Layout, ShapeSidecar, SHAPES_FILE};
pub use store::{read_store, write_store, FeatureStore, STORE_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, Scalar};

/// One layer's activations, stored channel-major (`C × H × W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationBlock<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> ActivationBlock<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "activation block dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{channels}x{height}x{width} block needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a block from channels-last (`H × W × C`) data.
    pub fn from_hwc(height: usize, width: usize, channels: usize, data: &[T]) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width}x{channels} block needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        let hw = height * width;
        let mut chw = vec![T::zero(); data.len()];
        for (p, px) in data.chunks_exact(channels.max(1)).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                chw[c * hw + p] = v;
            }
        }
        Self::new(channels, height, width, chw)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }
}

/// Per-channel spatial mean.
pub fn gap_pool<T: Scalar>(block: &ActivationBlock<T>) -> Vec<T> {
    let n = from_usize::<T>(block.height * block.width);
    (0..block.channels)
        .map(|c| block.channel(c).iter().copied().sum::<T>() / n)
        .collect()
}

/// Concatenation of the pooled blocks in order.
pub fn mlsp_concat<T: Scalar>(blocks: &[ActivationBlock<T>]) -> Result<Vec<T>> {
    if blocks.is_empty() {
        return Err(Error::invalid("no activation blocks to pool"));
    }
    Ok(blocks.iter().flat_map(gap_pool).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        let b = ActivationBlock::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap_pool(&b), vec![2.5]);
        let c = ActivationBlock::new(3, 4, 5, vec![0.75f32; 60]).unwrap();
        assert_eq!(gap_pool(&c), vec![0.75; 3]);
        let one = ActivationBlock::new(4, 1, 1, vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        assert_eq!(gap_pool(&one), one.data().to_vec());
    }

    #[test]
    fn hwc_transpose() {
        let b = ActivationBlock::from_hwc(1, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(b.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(gap_pool(&b), vec![2.5, 3.5, 4.5]);
    }

    #[test]
    fn concat_lengths() {
        let a = ActivationBlock::new(3, 2, 2, vec![1.0; 12]).unwrap();
        let b = ActivationBlock::new(5, 1, 3, vec![2.0; 15]).unwrap();
        assert_eq!(mlsp_concat(&[a.clone(), b]).unwrap().len(), 8);
        assert_eq!(mlsp_concat(&[a.clone()]).unwrap(), gap_pool(&a));
        assert!(mlsp_concat::<f64>(&[]).is_err());
    }

    #[test]
    fn sixteen_thousand_wide_schedule() {
        // 43 blocks whose widths add up to 16928.
        let mut widths = vec![392usize; 42];
        widths.push(464);
        let blocks: Vec<ActivationBlock<f32>> = widths
            .iter()
            .map(|&c| ActivationBlock::new(c, 2, 2, vec![0.5; c * 4]).unwrap())
            .collect();
        assert_eq!(mlsp_concat(&blocks).unwrap().len(), 16928);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ActivationBlock::new(0, 1, 1, Vec::<f64>::new()).is_err());
        assert!(ActivationBlock::new(2, 2, 2, vec![0.0f64; 7]).is_err());
    }
}
