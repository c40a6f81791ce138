//! Self-graph (SGT) and cross-graph (CGT) transformers.
//!
//! Both stacks are ordinary post-norm transformer layers whose attention is
//! restricted by a binary adjacency. SGT attends within the source graph
//! plus a global style node; CGT lets transferred nodes query the original
//! source nodes under the same adjacency.
//!
//! Weight matrices act on row vectors (`x * W`), so a projection written
//! `W_q v` in column form is stored as its `d_n x d_k` transpose, with all
//! heads concatenated along the output axis.

use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{init_matrix, SeededRng};
use crate::autodiff::{FeedForward, LayerNormParams, Linear, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, Style};

/// Architecture hyperparameters for the graph transformers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node embedding width `d_n`.
    pub d_model: usize,
    pub heads: usize,
    /// Layers per transformer stack, `N_T`.
    pub layers: usize,
    /// Keep the style node fixed across SGT layers.
    pub style_node_static: bool,
    pub symmetrize: bool,
    pub self_loops: bool,
    /// Replace the SGT adjacency with the identity (ablation).
    pub sgt_identity: bool,
    /// Replace the CGT adjacency with the identity (ablation).
    pub cgt_identity: bool,
    /// Feature maps per convolution width in both classifiers.
    pub classifier_maps: usize,
}

impl ModelConfig {
    /// Desk-scale defaults.
    pub fn toy() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 8,
            layers: 2,
            style_node_static: true,
            symmetrize: true,
            self_loops: true,
            sgt_identity: false,
            cgt_identity: false,
            classifier_maps: 16,
        }
    }

    /// Sizes used for the full-corpus experiments.
    pub fn full_scale() -> Self {
        ModelConfig { d_model: 512, classifier_maps: 100, ..Self::toy() }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads)));
        }
        if self.layers == 0 {
            return Err(Error::Config("need at least one transformer layer".into()));
        }
        if self.classifier_maps == 0 {
            return Err(Error::Config("classifier_maps must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

/// Query, key, value and output projections of one attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, d: usize) -> Self {
        let mut m = |suffix: &str| store.add(format!("{name}.{suffix}"), ParamGroup::Generator, init_matrix(rng, d, d));
        AttentionParams { wq: m("wq"), wk: m("wk"), wv: m("wv"), wo: m("wo") }
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.wq, self.wk, self.wv, self.wo]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerLayer {
    pub attention: AttentionParams,
    pub norm1: LayerNormParams,
    pub ffn: FeedForward,
    pub norm2: LayerNormParams,
}

impl TransformerLayer {
    fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, d: usize) -> Self {
        let g = ParamGroup::Generator;
        TransformerLayer {
            attention: AttentionParams::new(store, rng, &format!("{name}.attn"), d),
            norm1: LayerNormParams::new(store, &format!("{name}.ln1"), g, d),
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), g, d),
            norm2: LayerNormParams::new(store, &format!("{name}.ln2"), g, d),
        }
    }

    /// attention (with residual) -> LN -> residual FFN -> LN
    fn forward(&self, tape: &mut Tape, queries: Var, keys_values: Var, mask: &[bool], heads: usize) -> Result<Var> {
        let x = masked_multihead_attention(tape, queries, keys_values, mask, &self.attention, heads)?;
        let x = self.norm1.forward(tape, x)?;
        let x = self.ffn.forward(tape, x)?;
        self.norm2.forward(tape, x)
    }
}

/// One-hidden-layer MLP from a one-hot style label to `d_n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StyleEmbedder {
    pub hidden: Linear,
    pub out: Linear,
}

impl StyleEmbedder {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, d: usize) -> Self {
        StyleEmbedder {
            hidden: Linear::new(store, rng, "style.hidden", ParamGroup::Generator, 2, d),
            out: Linear::new(store, rng, "style.out", ParamGroup::Generator, d, d),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SgtParams {
    pub layers: Vec<TransformerLayer>,
    pub style: StyleEmbedder,
}

impl SgtParams {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, config: &ModelConfig) -> Self {
        SgtParams {
            layers: (0..config.layers).map(|l| TransformerLayer::new(store, rng, &format!("sgt.{l}"), config.d_model)).collect(),
            style: StyleEmbedder::new(store, rng, config.d_model),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CgtParams {
    pub layers: Vec<TransformerLayer>,
}

impl CgtParams {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, config: &ModelConfig) -> Self {
        CgtParams {
            layers: (0..config.layers).map(|l| TransformerLayer::new(store, rng, &format!("cgt.{l}"), config.d_model)).collect(),
        }
    }
}

/// `queries + (MultiHead(queries W_q, kv W_k, kv W_v | mask)) W_o`.
///
/// `mask` is row-major `k_q x k_v`; every query row needs at least one
/// visible position.
pub fn masked_multihead_attention(
    tape: &mut Tape,
    queries: Var,
    keys_values: Var,
    mask: &[bool],
    params: &AttentionParams,
    heads: usize,
) -> Result<Var> {
    let wq = tape.param(params.wq);
    let wk = tape.param(params.wk);
    let wv = tape.param(params.wv);
    let wo = tape.param(params.wo);
    let q = tape.matmul(queries, wq)?;
    let k = tape.matmul(keys_values, wk)?;
    let v = tape.matmul(keys_values, wv)?;
    let attn = tape.attention(q, k, v, mask, heads)?;
    let proj = tape.matmul(attn, wo)?;
    tape.add(queries, proj)
}

/// Style label to its `1 x d_n` latent vector.
pub fn style_embed(tape: &mut Tape, label: usize, embedder: &StyleEmbedder) -> Result<Var> {
    let style = Style::new(label)?;
    let mut onehot = Tensor::zeros(&[1, 2]);
    onehot.data_mut()[style.index()] = 1.0;
    let x = tape.constant(onehot);
    let h = embedder.hidden.forward(tape, x)?;
    let h = tape.relu(h)?;
    embedder.out.forward(tape, h)
}

/// Self-graph transformer over `node_embeds` (`k x d_n`).
///
/// `adjacency` must already carry the style node (size `k + 1`). Returns the
/// `k` token rows after `N_T` layers.
pub fn sgt_encode(
    tape: &mut Tape,
    adjacency: &Adjacency,
    node_embeds: Var,
    style: Style,
    params: &SgtParams,
    config: &ModelConfig,
) -> Result<Var> {
    if !adjacency.has_style_node() {
        return Err(Error::InvalidArgument("SGT needs an adjacency augmented with the style node".into()));
    }
    let k = adjacency.tokens();
    let shape = tape.shape(node_embeds).to_vec();
    if shape != [k, config.d_model] {
        return Err(Error::shape("sgt_encode", format!("nodes {:?} for {} tokens of width {}", shape, k, config.d_model)));
    }
    let style_vec = style_embed(tape, style.index(), &params.style)?;
    let full_mask = adjacency.bits();
    let token_rows = &full_mask[..k * (k + 1)];
    let mut x = node_embeds;
    if config.style_node_static {
        for layer in &params.layers {
            let kv = tape.concat_rows(&[x, style_vec])?;
            x = layer.forward(tape, x, kv, token_rows, config.heads)?;
        }
        Ok(x)
    } else {
        let mut all = tape.concat_rows(&[x, style_vec])?;
        for layer in &params.layers {
            all = layer.forward(tape, all, all, full_mask, config.heads)?;
        }
        tape.slice_rows(all, 0, k)
    }
}

/// Cross-graph transformer: `transferred` rows query `source` rows through
/// `adjacency` (no style node).
pub fn cgt_decode_nodes(
    tape: &mut Tape,
    transferred: Var,
    source: Var,
    adjacency: &Adjacency,
    params: &CgtParams,
    config: &ModelConfig,
) -> Result<Var> {
    let (kt, ks) = (tape.value(transferred).rows(), tape.value(source).rows());
    if kt != ks {
        return Err(Error::shape("cgt_decode_nodes", format!("transferred graph has {} nodes, source has {}", kt, ks)));
    }
    if adjacency.has_style_node() || adjacency.size() != kt {
        return Err(Error::shape("cgt_decode_nodes", format!("adjacency of size {} for {} nodes", adjacency.size(), kt)));
    }
    let mut x = transferred;
    for layer in &params.layers {
        x = layer.forward(tape, x, source, adjacency.bits(), config.heads)?;
    }
    Ok(x)
}
