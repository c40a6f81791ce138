//! Dense reverse-mode automatic differentiation and the neural primitives
//! the rest of the crate is built from.

mod adam;
pub mod nn;
mod param;
mod tape;
mod tensor;


pub use adam::{adam_update, Adam, AdamState};
pub use nn::{
    cross_entropy, ffn, gumbel_softmax, FeedForward, GumbelNoise, LayerNormParams, Linear, NoiseSource, ZeroNoise,
};
pub use param::{Param, ParamGroup, ParamId, ParamStore};
pub use tape::{Gradients, ParamGrads, Tape, Var, MASK_FILL};
pub use tensor::Tensor;
