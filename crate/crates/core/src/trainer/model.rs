use crate::autodiff::nn::{derive_rng, init_embedding};
use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::classifiers::TextCnn;
use crate::error::{Error, Result};
use crate::graph::{augment_with_style_node, build_adjacency, Adjacency, EdgeFlags, LinguisticGraph, Style, EOS};
use crate::rephraser::{decode_greedy, decode_teacher_forced, Memory, RephraserParams};
use crate::transformer::{cgt_decode_nodes, sgt_encode, CgtParams, ModelConfig, SgtParams};

const INIT_STREAM: u64 = 0x1417;

/// Parameter handles of the full pipeline: shared token embeddings, SGT,
/// CGT, rephraser and both classifiers. Values live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gtae {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub embedding: ParamId,
    pub sgt: SgtParams,
    pub cgt: CgtParams,
    pub rephraser: RephraserParams,
    pub d_g: TextCnn,
    pub d_s: TextCnn,
}

/// Intermediate values of one forward pass through SGT and CGT.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// Initial node embeddings.
    pub source: Var,
    /// SGT output.
    pub nodes: Var,
}

impl Gtae {
    /// Fresh parameters. Creation order is fixed, so the same config, vocab
    /// size and seed always give the same ids and values.
    pub fn build(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<(Gtae, ParamStore)> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let mut rng = derive_rng(seed, &[INIT_STREAM]);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let embedding = store.add("embedding", ParamGroup::Generator, init_embedding(&mut rng, vocab_size, d));
        let sgt = SgtParams::new(&mut store, &mut rng, config);
        let cgt = CgtParams::new(&mut store, &mut rng, config);
        let rephraser = RephraserParams::new(&mut store, &mut rng, d, vocab_size);
        let maps = config.classifier_maps;
        let d_g = TextCnn::new(&mut store, &mut rng, "d_g", ParamGroup::GraphClassifier, d, maps);
        let d_s = TextCnn::new(&mut store, &mut rng, "d_s", ParamGroup::SentenceClassifier, d, maps);
        let model = Gtae { config: config.clone(), vocab_size, embedding, sgt, cgt, rephraser, d_g, d_s };
        Ok((model, store))
    }

    pub fn generator_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_in(&[ParamGroup::Generator])
    }

    pub fn classifier_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_in(&[ParamGroup::GraphClassifier, ParamGroup::SentenceClassifier])
    }

    fn edge_flags(&self) -> EdgeFlags {
        EdgeFlags { symmetrize: self.config.symmetrize, self_loops: self.config.self_loops }
    }

    /// Token adjacency seen by SGT, with the style node appended.
    pub fn sgt_adjacency(&self, graph: &LinguisticGraph) -> Result<Adjacency> {
        let base = if self.config.sgt_identity {
            Adjacency::identity(graph.len())
        } else {
            build_adjacency(&graph.heads, self.edge_flags())
        };
        augment_with_style_node(&base)
    }

    /// Token adjacency seen by CGT.
    pub fn cgt_adjacency(&self, graph: &LinguisticGraph) -> Adjacency {
        if self.config.cgt_identity {
            Adjacency::identity(graph.len())
        } else {
            build_adjacency(&graph.heads, self.edge_flags())
        }
    }

    /// Embedding rows for `ids` from the shared table.
    pub fn embed(&self, tape: &mut Tape, embedding: Var, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        tape.gather_rows(embedding, ids)
    }

    /// SGT encoding of `graph` under `style`. Node embeddings are the table
    /// rows scaled by `sqrt(d_model)`, as in the base transformer.
    pub fn encode(&self, tape: &mut Tape, embedding: Var, graph: &LinguisticGraph, style: Style) -> Result<Encoded> {
        if graph.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty sentence".into()));
        }
        let rows = self.embed(tape, embedding, &graph.ids)?;
        let source = tape.scale(rows, (self.config.d_model as f64).sqrt())?;
        let adjacency = self.sgt_adjacency(graph)?;
        let nodes = sgt_encode(tape, &adjacency, source, style, &self.sgt, &self.config)?;
        Ok(Encoded { source, nodes })
    }

    /// CGT fusion followed by the rephraser's encoder.
    pub fn summarise(&self, tape: &mut Tape, encoded: Encoded, graph: &LinguisticGraph) -> Result<Memory> {
        let adjacency = self.cgt_adjacency(graph);
        let fused = cgt_decode_nodes(tape, encoded.nodes, encoded.source, &adjacency, &self.cgt, &self.config)?;
        Memory::encode(tape, fused, &self.rephraser)
    }

    /// Teacher-forced logits for reproducing `graph` under `style`.
    pub fn reconstruction_logits(&self, tape: &mut Tape, embedding: Var, graph: &LinguisticGraph, style: Style) -> Result<Var> {
        let encoded = self.encode(tape, embedding, graph, style)?;
        let state = self.summarise(tape, encoded, graph)?;
        decode_teacher_forced(tape, state, &reconstruction_target(graph), embedding, &self.rephraser)
    }

    /// Summed negative log-likelihood of the sentence (plus `<eos>`).
    pub fn reconstruction_nll(&self, tape: &mut Tape, embedding: Var, graph: &LinguisticGraph, style: Style) -> Result<Var> {
        let logits = self.reconstruction_logits(tape, embedding, graph, style)?;
        tape.cross_entropy(logits, &reconstruction_target(graph))
    }

    /// Greedy transfer of `graph` to `target`; deterministic.
    pub fn transfer(&self, store: &ParamStore, graph: &LinguisticGraph, target: Style, max_len: usize) -> Result<Vec<usize>> {
        let mut tape = Tape::with_trainable(store, |_| false);
        let embedding = tape.param(self.embedding);
        let encoded = self.encode(&mut tape, embedding, graph, target)?;
        let state = self.summarise(&mut tape, encoded, graph)?;
        decode_greedy(&mut tape, state, max_len, embedding, &self.rephraser)
    }
}

/// Sentence ids followed by `<eos>`.
pub fn reconstruction_target(graph: &LinguisticGraph) -> Vec<usize> {
    graph.ids.iter().copied().chain(std::iter::once(EOS)).collect()
}
