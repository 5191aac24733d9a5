use alloc::format;

use rand::Rng;

use super::{AttentionMask, NumericsError, ParamId, ParameterStore, Tape, Var};

/// Standard deviation of the normal initializer for weights and embeddings.
pub const INIT_STD: f64 = 0.02;

/// `y = x·W + b`, `W: [in × out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let weight = store.add_normal(&format!("{name}.weight"), &[input, output], INIT_STD, rng)?;
        let bias = store.add_filled(&format!("{name}.bias"), &[output], 0.0)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var, NumericsError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParameterStore, name: &str, width: usize) -> Result<Self, NumericsError> {
        let gain = store.add_filled(&format!("{name}.gain"), &[width], 1.0)?;
        let bias = store.add_filled(&format!("{name}.bias"), &[width], 0.0)?;
        Ok(Self { gain, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var, NumericsError> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, Self::EPS)
    }
}

/// Multi-head attention with separate query/key/value/output projections.
/// Keys and values may come from a memory of a different width.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        memory_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        if heads == 0 || dim % heads != 0 {
            return Err(NumericsError::Shape(format!("width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{name}.key"), memory_dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.value"), memory_dim, dim, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng)?,
            heads,
        })
    }

    /// Returns `(projected output, attention node)`; the attention node carries
    /// the per-head weights.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        x: Var,
        memory: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<(Var, Var), NumericsError> {
        let q = self.query.forward(tape, store, x)?;
        let k = self.key.forward(tape, store, memory)?;
        let v = self.value.forward(tape, store, memory)?;
        let attn = tape.attention(q, k, v, self.heads, mask)?;
        let out = self.output.forward(tape, store, attn)?;
        Ok((out, attn))
    }
}

/// Two-layer position-wise network with a GELU in between.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), dim, hidden, rng)?,
            output: Linear::new(store, &format!("{name}.output"), hidden, dim, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var, NumericsError> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.output.forward(tape, store, h)
    }
}
