//! Neural building blocks on top of the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal, Uniform};

use super::param::{ParamGroup, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ratio between the feed-forward inner width and the model width.
pub const FFN_RATIO: usize = 4;

/// Deterministic generator used for initialisation and sampling.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for `(seed, parts...)` so that work split
/// across threads draws the same numbers regardless of scheduling.
pub fn derive_rng(seed: u64, parts: &[u64]) -> SeededRng {
    let mut h = splitmix(seed);
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Matrix with entries uniform in `±1/sqrt(fan_in)`.
pub fn init_matrix(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape")
}

/// Embedding table drawn from N(0, 0.01), i.e. standard deviation 0.1.
pub fn init_embedding(rng: &mut SeededRng, rows: usize, dim: usize) -> Tensor {
    let dist = Normal::new(0.0, 0.1).expect("valid normal");
    let data = (0..rows * dim).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![rows, dim], data).expect("shape")
}

/// Dense layer `x * w + b` with `w: in x out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, group: ParamGroup, d_in: usize, d_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), group, init_matrix(rng, d_in, d_out));
        let b = store.add(format!("{name}.b"), group, Tensor::zeros(&[1, d_out]));
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.affine(x, w, b)
    }
}

/// Layer-norm gain and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, d: usize) -> Self {
        LayerNormParams {
            gain: store.add(format!("{name}.gain"), group, Tensor::full(&[1, d], 1.0)),
            bias: store.add(format!("{name}.bias"), group, Tensor::zeros(&[1, d])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Residual position-wise feed-forward block: `x + W2 relu(W1 x + b1) + b2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, group: ParamGroup, d: usize) -> Self {
        FeedForward {
            inner: Linear::new(store, rng, &format!("{name}.inner"), group, d, FFN_RATIO * d),
            outer: Linear::new(store, rng, &format!("{name}.outer"), group, FFN_RATIO * d, d),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        ffn(tape, x, self)
    }
}

pub fn ffn(tape: &mut Tape, x: Var, params: &FeedForward) -> Result<Var> {
    let h = params.inner.forward(tape, x)?;
    let h = tape.relu(h)?;
    let y = params.outer.forward(tape, h)?;
    if tape.shape(y) != tape.shape(x) {
        return Err(Error::shape("ffn", format!("{:?} -> {:?}", tape.shape(x), tape.shape(y))));
    }
    tape.add(x, y)
}

/// Softmax cross-entropy of one row of logits against `label`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    tape.cross_entropy(logits, &[label])
}

/// Source of the additive perturbation in [`gumbel_softmax`].
pub trait NoiseSource {
    fn sample(&mut self, n: usize) -> Vec<f64>;
}

/// I.i.d. standard Gumbel noise.
pub struct GumbelNoise<R: Rng> {
    rng: R,
}

impl<R: Rng> GumbelNoise<R> {
    pub fn new(rng: R) -> Self {
        GumbelNoise { rng }
    }
}

impl<R: Rng> NoiseSource for GumbelNoise<R> {
    fn sample(&mut self, n: usize) -> Vec<f64> {
        let dist = Gumbel::new(0.0, 1.0).expect("standard gumbel");
        (0..n).map(|_| dist.sample(&mut self.rng)).collect()
    }
}

/// Test hook: no noise, so the relaxation reduces to a tempered softmax.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn sample(&mut self, n: usize) -> Vec<f64> {
        vec![0.0; n]
    }
}

/// `softmax((logits + g) / temperature)` along rows with `g` drawn from
/// `noise`. The noise enters as a constant.
pub fn gumbel_softmax(tape: &mut Tape, logits: Var, temperature: f64, noise: &mut dyn NoiseSource) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let shape = tape.shape(logits).to_vec();
    let g = Tensor::new(shape.clone(), noise.sample(shape.iter().product()))?;
    let g = tape.constant(g);
    let perturbed = tape.add(logits, g)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature)?;
    tape.softmax_rows(scaled)
}
