use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{patchify, GridFeatures, Image, VisionError};
use crate::numerics::{
    FeedForward, LayerNormParams, Linear, MultiHeadAttention, ParamId, ParameterStore, Tape, Var, INIT_STD,
};

/// Parameter-name prefix of every encoder array.
pub const VISION_PREFIX: &str = "vision.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisionConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub patch: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self { image_width: 32, image_height: 32, patch: 4, dim: 32, layers: 2, heads: 4, ff_dim: 64 }
    }
}

impl VisionConfig {
    /// `(rows, cols)` of the patch grid.
    pub fn grid(&self) -> Result<(usize, usize), VisionError> {
        if self.patch == 0 || self.image_width % self.patch != 0 || self.image_height % self.patch != 0 {
            return Err(VisionError::Dimensions(format!(
                "{}x{} not divisible by patch {}",
                self.image_width, self.image_height, self.patch
            )));
        }
        Ok((self.image_height / self.patch, self.image_width / self.patch))
    }

    pub fn num_patches(&self) -> Result<usize, VisionError> {
        self.grid().map(|(r, c)| r * c)
    }
}

#[derive(Clone, Copy, Debug)]
struct EncoderBlock {
    ln_attn: LayerNormParams,
    attn: MultiHeadAttention,
    ln_ff: LayerNormParams,
    ff: FeedForward,
}

/// Patch transformer: linear patch embedding, learned patch positions and
/// pre-norm self-attention blocks.
#[derive(Clone, Debug)]
pub struct VisionEncoder {
    config: VisionConfig,
    patch_embed: Linear,
    positions: ParamId,
    blocks: Vec<EncoderBlock>,
    ln_out: LayerNormParams,
}

impl VisionEncoder {
    pub fn new<R: Rng>(config: &VisionConfig, store: &mut ParameterStore, rng: &mut R) -> Result<Self, VisionError> {
        let y = config.num_patches()?;
        let p = VISION_PREFIX;
        let patch_width = config.patch * config.patch * Image::CHANNELS;
        let patch_embed = Linear::new(store, &format!("{p}patch_embed"), patch_width, config.dim, rng)?;
        let positions = store.add_normal(&format!("{p}positions"), &[y, config.dim], INIT_STD, rng)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let name = format!("{p}blocks.{i}");
            blocks.push(EncoderBlock {
                ln_attn: LayerNormParams::new(store, &format!("{name}.ln_attn"), config.dim)?,
                attn: MultiHeadAttention::new(store, &format!("{name}.attn"), config.dim, config.dim, config.heads, rng)?,
                ln_ff: LayerNormParams::new(store, &format!("{name}.ln_ff"), config.dim)?,
                ff: FeedForward::new(store, &format!("{name}.ff"), config.dim, config.ff_dim, rng)?,
            });
        }
        let ln_out = LayerNormParams::new(store, &format!("{p}ln_out"), config.dim)?;
        Ok(Self { config: config.clone(), patch_embed, positions, blocks, ln_out })
    }

    pub fn config(&self) -> &VisionConfig {
        &self.config
    }

    pub fn positions(&self) -> ParamId {
        self.positions
    }

    /// Records the encoder on `tape` and returns the `Y × d` feature node.
    pub fn encode(&self, tape: &mut Tape, store: &ParameterStore, image: &Image) -> Result<Var, VisionError> {
        if image.width() != self.config.image_width || image.height() != self.config.image_height {
            return Err(VisionError::Dimensions(format!(
                "encoder expects {}x{} images, got {}x{}",
                self.config.image_width,
                self.config.image_height,
                image.width(),
                image.height()
            )));
        }
        let patches = patchify(image, self.config.patch)?;
        let x = tape.constant(&patches);
        let mut h = self.patch_embed.forward(tape, store, x)?;
        let pos = tape.param(store, self.positions);
        h = tape.add(h, pos)?;
        for b in &self.blocks {
            let n = b.ln_attn.forward(tape, store, h)?;
            let (a, _) = b.attn.forward(tape, store, n, n, None)?;
            h = tape.add(h, a)?;
            let n = b.ln_ff.forward(tape, store, h)?;
            let f = b.ff.forward(tape, store, n)?;
            h = tape.add(h, f)?;
        }
        Ok(self.ln_out.forward(tape, store, h)?)
    }

    /// Encodes outside of any training graph.
    pub fn features(&self, store: &ParameterStore, image: &Image) -> Result<GridFeatures, VisionError> {
        let mut tape = Tape::new();
        let v = self.encode(&mut tape, store, image)?;
        GridFeatures::new(tape.to_tensor(v), self.config.grid()?)
    }
}
