//! Images, patch extraction and the patch-transformer encoder producing grid features.

mod encoder;
mod image;

use alloc::string::String;

pub use encoder::{VisionConfig, VisionEncoder, VISION_PREFIX};
pub use image::{patchify, unpatchify, Image};

use crate::numerics::{NumericsError, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VisionError {
    #[error("image dimensions: {0}")]
    Dimensions(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `Y × d` patch features; row `i` is patch `(i / cols, i % cols)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFeatures {
    features: Tensor,
    grid: (usize, usize),
}

impl GridFeatures {
    pub fn new(features: Tensor, grid: (usize, usize)) -> Result<Self, VisionError> {
        if features.shape().len() != 2 || features.rows() != grid.0 * grid.1 {
            return Err(VisionError::Dimensions(alloc::format!(
                "{:?} features for a {}x{} grid",
                features.shape(),
                grid.0,
                grid.1
            )));
        }
        if !features.is_finite() {
            return Err(VisionError::Numerics(NumericsError::NonFinite("grid features")));
        }
        Ok(Self { features, grid })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.features
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn num_patches(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}
