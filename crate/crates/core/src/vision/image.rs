use alloc::vec;
use alloc::vec::Vec;

use super::VisionError;
use crate::numerics::Tensor;

/// RGB image with values in `[0, 1]`, stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, VisionError> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(VisionError::Dimensions(alloc::format!(
                "{}x{} image with {} values",
                width,
                height,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(VisionError::Dimensions("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `(rows, cols)` of the patch grid.
    pub fn grid(&self, patch: usize) -> Result<(usize, usize), VisionError> {
        if patch == 0 || self.width % patch != 0 || self.height % patch != 0 {
            return Err(VisionError::Dimensions(alloc::format!(
                "{}x{} image is not divisible into {}x{} patches",
                self.width,
                self.height,
                patch,
                patch
            )));
        }
        Ok((self.height / patch, self.width / patch))
    }
}

/// Non-overlapping `patch × patch` tiles in row-major grid order, each
/// flattened row by row with channels interleaved: `Y × (patch·patch·3)`.
pub fn patchify(image: &Image, patch: usize) -> Result<Tensor, VisionError> {
    let (rows, cols) = image.grid(patch)?;
    let width = patch * patch * 3;
    let mut out = Vec::with_capacity(rows * cols * width);
    for pr in 0..rows {
        for pc in 0..cols {
            for y in pr * patch..(pr + 1) * patch {
                let start = (y * image.width + pc * patch) * 3;
                out.extend_from_slice(&image.data[start..start + patch * 3]);
            }
        }
    }
    Ok(Tensor::new(vec![rows * cols, width], out).expect("patch count matches"))
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, patch: usize, width: usize, height: usize) -> Result<Image, VisionError> {
    if patch == 0 || width % patch != 0 || height % patch != 0 {
        return Err(VisionError::Dimensions("grid does not divide the image".into()));
    }
    let (rows, cols) = (height / patch, width / patch);
    if patches.shape() != [rows * cols, patch * patch * 3] {
        return Err(VisionError::Dimensions(alloc::format!("unexpected patch matrix {:?}", patches.shape())));
    }
    let mut data = vec![0.0; width * height * 3];
    for pr in 0..rows {
        for pc in 0..cols {
            let row = patches.row(pr * cols + pc);
            for dy in 0..patch {
                let y = pr * patch + dy;
                let start = (y * width + pc * patch) * 3;
                data[start..start + patch * 3].copy_from_slice(&row[dy * patch * 3..(dy + 1) * patch * 3]);
            }
        }
    }
    Image::new(width, height, data)
}
