//! The held-out style classifier that scores transfer outputs.
//!
//! It owns its embedding table and TextCNN, lives in the `Evaluation`
//! parameter group and is trained once on hard token ids, after which it
//! is only ever read.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{derive_rng, init_embedding, rng_from};
use crate::autodiff::{Adam, ParamGrads, ParamGroup, ParamId, ParamStore, Tape, Tensor};
use crate::classifiers::{textcnn_forward, textcnn_forward_frozen, TextCnn};
use crate::error::{Error, Result};
use crate::graph::{Example, Style};

const SHUFFLE_STREAM: u64 = 0xE7A1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalClassifierConfig {
    pub dim: usize,
    pub maps: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvalClassifierConfig {
    fn default() -> Self {
        EvalClassifierConfig { dim: 32, maps: 16, epochs: 4, learning_rate: 1e-3, batch_size: 16, seed: 7 }
    }
}

/// Anything that maps a token-id sequence to a two-class posterior.
pub trait StyleScorer: Sync {
    fn posterior(&self, ids: &[usize]) -> Result<[f64; 2]>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalClassifier {
    config: EvalClassifierConfig,
    vocab_size: usize,
    store: ParamStore,
    embedding: ParamId,
    cnn: TextCnn,
}

#[derive(Serialize, Deserialize)]
struct SavedParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SavedClassifier {
    config: EvalClassifierConfig,
    vocab_size: usize,
    params: Vec<SavedParam>,
}

impl EvalClassifier {
    /// Freshly initialised, untrained classifier.
    pub fn new(vocab_size: usize, config: EvalClassifierConfig) -> Result<Self> {
        if vocab_size == 0 || config.dim == 0 || config.maps == 0 || config.batch_size == 0 {
            return Err(Error::Config("evaluation classifier sizes must be positive".into()));
        }
        let mut rng = rng_from(config.seed);
        let mut store = ParamStore::new();
        let embedding = store.add("eval.embedding", ParamGroup::Evaluation, init_embedding(&mut rng, vocab_size, config.dim));
        let cnn = TextCnn::new(&mut store, &mut rng, "eval.cnn", ParamGroup::Evaluation, config.dim, config.maps);
        Ok(EvalClassifier { config, vocab_size, store, embedding, cnn })
    }

    pub fn config(&self) -> &EvalClassifierConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.vocab_size) {
            Some(i) => Err(Error::InvalidArgument(format!("token id {i} outside vocabulary of {}", self.vocab_size))),
            None => Ok(()),
        }
    }

    fn loss_grads(&self, ids: &[usize], label: Style) -> Result<(ParamGrads, f64)> {
        self.check_ids(ids)?;
        let mut tape = Tape::with_params(&self.store);
        let table = tape.param(self.embedding);
        let seq = tape.gather_rows(table, ids)?;
        let logits = textcnn_forward(&mut tape, seq, &self.cnn)?;
        let loss = tape.cross_entropy(logits, &[label.index()])?;
        let value = tape.value(loss).data()[0];
        Ok((tape.backward(loss)?.into_params(), value))
    }

    /// Most likely style, or `None` for an empty sequence.
    pub fn predict(&self, ids: &[usize]) -> Result<Option<Style>> {
        if ids.is_empty() {
            return Ok(None);
        }
        let p = self.posterior(ids)?;
        Ok(Some(if p[1] > p[0] { Style::ONE } else { Style::ZERO }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let params = self
            .store
            .iter()
            .map(|(_, p)| SavedParam { name: p.name.clone(), shape: p.value.shape().to_vec(), data: p.value.data().to_vec() })
            .collect();
        let saved = SavedClassifier { config: self.config.clone(), vocab_size: self.vocab_size, params };
        fs::write(path, serde_json::to_string(&saved)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let saved: SavedClassifier = serde_json::from_str(&fs::read_to_string(path)?)?;
        let mut clf = EvalClassifier::new(saved.vocab_size, saved.config)?;
        if saved.params.len() != clf.store.len() {
            return Err(Error::Data(format!("classifier file holds {} tensors, expected {}", saved.params.len(), clf.store.len())));
        }
        for p in saved.params {
            let id = clf.store.find(&p.name).ok_or_else(|| Error::Data(format!("unknown classifier tensor {}", p.name)))?;
            if clf.store.value(id).shape() != p.shape.as_slice() {
                return Err(Error::Data(format!("classifier tensor {} has shape {:?}", p.name, p.shape)));
            }
            *clf.store.value_mut(id) = Tensor::new(p.shape, p.data)?;
        }
        Ok(clf)
    }
}

impl StyleScorer for EvalClassifier {
    /// Softmax over the two logits; an empty sequence gets `[0.5, 0.5]`.
    fn posterior(&self, ids: &[usize]) -> Result<[f64; 2]> {
        if ids.is_empty() {
            return Ok([0.5, 0.5]);
        }
        self.check_ids(ids)?;
        let mut tape = Tape::with_params(&self.store);
        let table = tape.param_frozen(self.embedding);
        let seq = tape.gather_rows(table, ids)?;
        let logits = textcnn_forward_frozen(&mut tape, seq, &self.cnn)?;
        let p = tape.value(logits).softmax(1)?;
        Ok([p.data()[0], p.data()[1]])
    }
}

/// Trains a fresh classifier on `(token ids, style)` pairs with Adam.
pub fn train_eval_classifier(data: &[(Vec<usize>, Style)], vocab_size: usize, config: EvalClassifierConfig) -> Result<EvalClassifier> {
    if data.is_empty() {
        return Err(Error::Data("no sentences to train the evaluation classifier on".into()));
    }
    if let Some((i, _)) = data.iter().enumerate().find(|(_, (ids, _))| ids.is_empty()) {
        return Err(Error::Data(format!("training sentence {i} is empty")));
    }
    let mut clf = EvalClassifier::new(vocab_size, config)?;
    let mut optimizer = Adam::new(clf.config.learning_rate);
    let ids: Vec<ParamId> = clf.store.ids().collect();
    for epoch in 0..clf.config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut derive_rng(clf.config.seed, &[SHUFFLE_STREAM, epoch as u64]));
        for batch in order.chunks(clf.config.batch_size) {
            let results: Vec<Result<(ParamGrads, f64)>> =
                batch.par_iter().map(|&i| clf.loss_grads(&data[i].0, data[i].1)).collect();
            let mut total = ParamGrads::default();
            for r in results {
                let (g, loss) = r?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite("evaluation classifier loss"));
                }
                total.accumulate(&g);
            }
            total.scale(1.0 / batch.len() as f64);
            optimizer.step(&mut clf.store, &total, &ids)?;
        }
    }
    Ok(clf)
}

/// Hard-token training pairs from encoded examples.
pub fn labelled_ids(examples: &[Example]) -> Vec<(Vec<usize>, Style)> {
    examples.iter().map(|e| (e.graph.ids.clone(), e.style)).collect()
}

/// Fraction of outputs whose predicted style equals its target. Empty
/// outputs count as misses.
pub fn accuracy<C: StyleScorer + ?Sized>(outputs: &[Vec<usize>], targets: &[Style], classifier: &C) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    if outputs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!("{} outputs for {} targets", outputs.len(), targets.len())));
    }
    let hits: Vec<Result<bool>> = outputs
        .par_iter()
        .zip(targets)
        .map(|(ids, target)| {
            if ids.is_empty() {
                return Ok(false);
            }
            let p = classifier.posterior(ids)?;
            Ok(p[target.index()] > p[target.flipped().index()])
        })
        .collect();
    let mut count = 0usize;
    for h in hits {
        count += usize::from(h?);
    }
    Ok(count as f64 / outputs.len() as f64)
}

/// Mean over sentences of `max(0, p_target(out) - p_target(in))`, the
/// two-bin earth mover's distance counted only when it moves toward the
/// target.
pub fn transfer_emd(inputs: &[[f64; 2]], outputs: &[[f64; 2]], targets: &[Style]) -> Result<f64> {
    if inputs.len() != outputs.len() || inputs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} input posteriors, {} output posteriors, {} targets",
            inputs.len(),
            outputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("emd of an empty set".into()));
    }
    let total: f64 = inputs.iter().zip(outputs).zip(targets).map(|((i, o), t)| per_sentence_emd(i, o, *t)).sum();
    Ok(total / inputs.len() as f64)
}

pub fn per_sentence_emd(input: &[f64; 2], output: &[f64; 2], target: Style) -> f64 {
    (output[target.index()] - input[target.index()]).max(0.0)
}
