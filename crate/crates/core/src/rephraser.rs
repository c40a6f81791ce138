//! GRU encoder-decoder that turns fused graph nodes back into a sentence.

use crate::autodiff::nn::{init_matrix, SeededRng};
use crate::autodiff::{gumbel_softmax, Linear, NoiseSource, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{BOS, EOS};

/// Longest decode: 15 tokens plus `<bos>`/`<eos>` slack.
pub const DEFAULT_DECODE_LEN: usize = 17;

/// One GRU cell. Gate blocks are packed along columns in the order
/// update, reset, candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub w: ParamId,
    pub u: ParamId,
    pub bw: ParamId,
    pub bu: ParamId,
}

impl GruParams {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, d_in: usize, d_hidden: usize) -> Self {
        let g = ParamGroup::Generator;
        GruParams {
            w: store.add(format!("{name}.w"), g, init_matrix(rng, d_in, 3 * d_hidden)),
            u: store.add(format!("{name}.u"), g, init_matrix(rng, d_hidden, 3 * d_hidden)),
            bw: store.add(format!("{name}.bw"), g, Tensor::zeros(&[1, 3 * d_hidden])),
            bu: store.add(format!("{name}.bu"), g, Tensor::zeros(&[1, 3 * d_hidden])),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RephraserParams {
    pub encoder: GruParams,
    /// Reads `[previous token ; node t]` at step `t`.
    pub decoder: GruParams,
    /// Encoder final state to decoder initial state.
    pub bridge: Linear,
    /// Decoder state to vocabulary logits.
    pub vocab: Linear,
}

impl RephraserParams {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, d: usize, vocab_size: usize) -> Self {
        RephraserParams {
            encoder: GruParams::new(store, rng, "rephraser.enc", d, d),
            decoder: GruParams::new(store, rng, "rephraser.dec", 2 * d, d),
            bridge: Linear::new(store, rng, "rephraser.bridge", ParamGroup::Generator, d, d),
            vocab: Linear::new(store, rng, "rephraser.vocab", ParamGroup::Generator, d, vocab_size),
        }
    }
}

/// `h' = (1 - z) * h + z * n` with `z`, `r` sigmoid gates and
/// `n = tanh(x W_n + b_n + r * (h U_n + c_n))`.
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, params: &GruParams) -> Result<Var> {
    let d = tape.value(h).cols();
    if tape.shape(h) != [1, d] || tape.value(x).rows() != 1 {
        return Err(Error::shape("gru_cell", format!("x {:?}, h {:?}", tape.shape(x), tape.shape(h))));
    }
    let (w, u, bw, bu) = (tape.param(params.w), tape.param(params.u), tape.param(params.bw), tape.param(params.bu));
    if tape.shape(u) != [d, 3 * d] {
        return Err(Error::shape("gru_cell", format!("recurrent weights {:?} for hidden size {d}", tape.shape(u))));
    }
    let gx = tape.affine(x, w, bw)?;
    let gh = tape.affine(h, u, bu)?;
    let zr_x = tape.slice_cols(gx, 0, 2 * d)?;
    let zr_h = tape.slice_cols(gh, 0, 2 * d)?;
    let zr = tape.add(zr_x, zr_h)?;
    let zr = tape.sigmoid(zr)?;
    let z = tape.slice_cols(zr, 0, d)?;
    let r = tape.slice_cols(zr, d, d)?;
    let nx = tape.slice_cols(gx, 2 * d, d)?;
    let nh = tape.slice_cols(gh, 2 * d, d)?;
    let rnh = tape.mul(r, nh)?;
    let n = tape.add(nx, rnh)?;
    let n = tape.tanh(n)?;
    let delta = tape.sub(n, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}

/// GRU scan over the first `len` rows of `fused` (all rows when `None`),
/// starting from zeros. Returns the final `1 x d` state.
pub fn encode_nodes(tape: &mut Tape, fused: Var, len: Option<usize>, params: &RephraserParams) -> Result<Var> {
    let (k, d) = (tape.value(fused).rows(), tape.value(fused).cols());
    let len = len.unwrap_or(k).min(k);
    if len == 0 {
        return Err(Error::InvalidArgument("cannot encode an empty node sequence".into()));
    }
    let mut h = tape.constant(Tensor::zeros(&[1, d]));
    for i in 0..len {
        let x = tape.slice_rows(fused, i, 1)?;
        h = gru_cell(tape, x, h, &params.encoder)?;
    }
    Ok(h)
}

/// What the decoder conditions on: the scanned summary of the fused nodes
/// and the nodes themselves, read one per step.
#[derive(Clone, Copy, Debug)]
pub struct Memory {
    /// `1 x d` output of [`encode_nodes`].
    pub state: Var,
    /// `k x d` fused nodes.
    pub nodes: Var,
}

impl Memory {
    /// Scans `nodes` and keeps them for per-step reads.
    pub fn encode(tape: &mut Tape, nodes: Var, params: &RephraserParams) -> Result<Self> {
        let state = encode_nodes(tape, nodes, None, params)?;
        Ok(Memory { state, nodes })
    }

    fn initial_state(&self, tape: &mut Tape, params: &RephraserParams) -> Result<Var> {
        let h = params.bridge.forward(tape, self.state)?;
        tape.tanh(h)
    }

    /// Decoder input at step `t`: the previous token's embedding next to
    /// node `t`, or next to zeros once the nodes run out.
    fn step_input(&self, tape: &mut Tape, token: Var, t: usize) -> Result<Var> {
        let (k, d) = (tape.value(self.nodes).rows(), tape.value(self.nodes).cols());
        let node = if t < k { tape.slice_rows(self.nodes, t, 1)? } else { tape.constant(Tensor::zeros(&[1, d])) };
        tape.concat_cols(&[token, node])
    }
}

/// Logits (`T x V`) for each position of `target` given the gold prefix.
///
/// `target` ends with `<eos>`; inputs are `<bos>` followed by all but the
/// last target token, embedded through `embedding`.
pub fn decode_teacher_forced(
    tape: &mut Tape,
    memory: Memory,
    target: &[usize],
    embedding: Var,
    params: &RephraserParams,
) -> Result<Var> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("teacher forcing needs a non-empty target".into()));
    }
    if target.last() != Some(&EOS) {
        return Err(Error::InvalidArgument("teacher-forced target must end with <eos>".into()));
    }
    let inputs: Vec<usize> = std::iter::once(BOS).chain(target[..target.len() - 1].iter().copied()).collect();
    let xs = tape.gather_rows(embedding, &inputs)?;
    let mut h = memory.initial_state(tape, params)?;
    let mut states = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let token = tape.slice_rows(xs, t, 1)?;
        let x = memory.step_input(tape, token, t)?;
        h = gru_cell(tape, x, h, &params.decoder)?;
        states.push(h);
    }
    let states = tape.concat_rows(&states)?;
    params.vocab.forward(tape, states)
}

/// Result of a sampled or greedy decode.
#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// Argmax token per step, including the final `<eos>` if one was drawn.
    pub ids: Vec<usize>,
    /// Relaxed one-hot rows, `T x V`, one per entry of `ids`.
    pub relaxed: Var,
    /// Pre-noise logits, `T x V`.
    pub logits: Var,
}

impl DecodeOutput {
    /// Tokens before the first `<eos>`.
    pub fn tokens(&self) -> &[usize] {
        let end = self.ids.iter().position(|&i| i == EOS).unwrap_or(self.ids.len());
        &self.ids[..end]
    }
}

/// Autoregressive decode with Gumbel-softmax relaxation. Each step feeds
/// `relaxed * embedding` into the next; stops after `<eos>` or `max_len`
/// steps.
pub fn decode_sample(
    tape: &mut Tape,
    memory: Memory,
    temperature: f64,
    max_len: usize,
    noise: &mut dyn NoiseSource,
    embedding: Var,
    params: &RephraserParams,
) -> Result<DecodeOutput> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut h = memory.initial_state(tape, params)?;
    let mut token = tape.gather_rows(embedding, &[BOS])?;
    let (mut ids, mut relaxed, mut logits) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..max_len {
        let x = memory.step_input(tape, token, t)?;
        h = gru_cell(tape, x, h, &params.decoder)?;
        let l = params.vocab.forward(tape, h)?;
        let y = gumbel_softmax(tape, l, temperature, noise)?;
        let id = tape.value(y).argmax_row(0);
        ids.push(id);
        relaxed.push(y);
        logits.push(l);
        if id == EOS {
            break;
        }
        token = tape.matmul(y, embedding)?;
    }
    Ok(DecodeOutput { ids, relaxed: tape.concat_rows(&relaxed)?, logits: tape.concat_rows(&logits)? })
}

/// Hard greedy decode used at inference. Returns ids before `<eos>`.
pub fn decode_greedy(
    tape: &mut Tape,
    memory: Memory,
    max_len: usize,
    embedding: Var,
    params: &RephraserParams,
) -> Result<Vec<usize>> {
    let mut h = memory.initial_state(tape, params)?;
    let mut ids = Vec::new();
    let mut prev = BOS;
    for t in 0..max_len {
        let token = tape.gather_rows(embedding, &[prev])?;
        let x = memory.step_input(tape, token, t)?;
        h = gru_cell(tape, x, h, &params.decoder)?;
        let l = params.vocab.forward(tape, h)?;
        prev = tape.value(l).argmax_row(0);
        if prev == EOS {
            break;
        }
        ids.push(prev);
    }
    Ok(ids)
}
