//! Training: warm-up, alternating transfer/classifier phases, validation
//! and checkpoints.
//!
//! Every sentence gets its own tape and gradients are summed in batch
//! order, so results do not depend on how many worker threads run the
//! per-sentence passes.

mod checkpoint;
mod config_file;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config_file::{apply_setting, parse_config, RunConfig};
pub use model::{reconstruction_target, Encoded, Gtae};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::derive_rng;
use crate::autodiff::{Adam, GumbelNoise, ParamGrads, ParamGroup, ParamStore, Tape, Var};
use crate::classifiers::{classifier_loss, predict, relaxed_sequence, transfer_loss, LossBundle};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Example, Style};
use crate::rephraser::{decode_sample, DEFAULT_DECODE_LEN};
use crate::transformer::ModelConfig;

const SHUFFLE_STREAM: u64 = 0x5f1e;
const NOISE_STREAM: u64 = 0x6e01;

/// How transfer and classifier updates interleave.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternation {
    /// One generator step, then one classifier step, per minibatch.
    Minibatch,
    /// A full generator pass over the data, then a full classifier pass.
    Epoch,
}

/// Optimisation hyperparameters and loss switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_g: f64,
    pub lambda_s: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub train_epochs: usize,
    pub temperature_start: f64,
    pub temperature_anneal: f64,
    pub temperature_floor: f64,
    pub seed: u64,
    pub alternation: Alternation,
    /// Validation rounds without improvement before stopping.
    pub patience: usize,
    pub decode_max_len: usize,
    /// `L^c_{clas,g}` in classifier steps.
    pub classifier_g: bool,
    /// `L^c_{clas,s}` in classifier steps.
    pub classifier_s: bool,
    /// `L^t_{clas,g}` in transfer steps.
    pub transfer_g: bool,
    /// `L^t_{clas,s}` in transfer steps.
    pub transfer_s: bool,
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn toy() -> Self {
        TrainConfig {
            lambda_g: 0.05,
            lambda_s: 0.02,
            learning_rate: 1e-3,
            batch_size: 16,
            warmup_epochs: 6,
            train_epochs: 6,
            temperature_start: 1.0,
            temperature_anneal: 0.5,
            temperature_floor: 0.1,
            seed: 0,
            alternation: Alternation::Minibatch,
            patience: 2,
            decode_max_len: DEFAULT_DECODE_LEN,
            classifier_g: true,
            classifier_s: true,
            transfer_g: true,
            transfer_s: true,
        }
    }

    /// Full-corpus settings.
    pub fn full_scale() -> Self {
        TrainConfig { batch_size: 128, warmup_epochs: 10, ..Self::toy() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_g >= 0.0 && self.lambda_s >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.temperature_floor > 0.0 && self.temperature_start > 0.0 && self.temperature_anneal > 0.0) {
            return Err(Error::Config("temperatures and anneal rate must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.decode_max_len == 0 {
            return Err(Error::Config("batch size and decode length must be positive".into()));
        }
        Ok(())
    }

    /// Gumbel temperature during training epoch `epoch` (0-based):
    /// `max(floor, start * anneal^epoch)`.
    pub fn temperature(&self, epoch: usize) -> f64 {
        (self.temperature_start * self.temperature_anneal.powi(epoch as i32)).max(self.temperature_floor)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

/// Best validation result so far.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub transfer_accuracy: f64,
    pub reconstruction: f64,
}

impl Validation {
    /// Higher transfer accuracy wins; lower reconstruction loss breaks ties.
    pub fn better_than(&self, other: &Validation) -> bool {
        self.transfer_accuracy > other.transfer_accuracy
            || (self.transfer_accuracy == other.transfer_accuracy && self.reconstruction < other.reconstruction)
    }
}

/// Everything needed to resume training.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub model: Gtae,
    pub store: ParamStore,
    pub optimizer: Adam,
    pub warmup_done: usize,
    pub train_done: usize,
    pub best: Option<Validation>,
    /// Validation rounds since `best` last improved.
    pub stale: usize,
    pub vocab_hash: String,
}

impl ModelState {
    pub fn new(config: &ModelConfig, train: &TrainConfig, vocab_size: usize, vocab_hash: impl Into<String>) -> Result<Self> {
        train.validate()?;
        let (model, store) = Gtae::build(config, vocab_size, train.seed)?;
        Ok(ModelState {
            model,
            store,
            optimizer: Adam::new(train.learning_rate),
            warmup_done: 0,
            train_done: 0,
            best: None,
            stale: 0,
            vocab_hash: vocab_hash.into(),
        })
    }

    /// Epochs completed across both phases.
    pub fn epoch(&self) -> usize {
        self.warmup_done + self.train_done
    }
}

fn generator_tape(store: &ParamStore) -> Tape<'_> {
    Tape::with_trainable(store, |p| p.group == ParamGroup::Generator)
}

fn classifier_tape(store: &ParamStore) -> Tape<'_> {
    Tape::with_trainable(store, |p| matches!(p.group, ParamGroup::GraphClassifier | ParamGroup::SentenceClassifier))
}

/// Per-sentence `L_rec` and its generator gradient.
pub fn reconstruction_step(model: &Gtae, store: &ParamStore, example: &Example) -> Result<(ParamGrads, LossBundle)> {
    let mut tape = generator_tape(store);
    let embedding = tape.param(model.embedding);
    let loss = model.reconstruction_nll(&mut tape, embedding, &example.graph, example.style)?;
    let rec = tape.value(loss).item();
    Ok((tape.backward(loss)?.into_params(), LossBundle { rec, ..Default::default() }))
}

/// Builds `L_rec + lambda_g L^t_g + lambda_s L^t_s` for one sentence on
/// `tape`. Disabled terms are neither computed nor added.
pub fn transfer_objective(
    model: &Gtae,
    tape: &mut Tape,
    example: &Example,
    config: &TrainConfig,
    temperature: f64,
    noise: &mut dyn crate::autodiff::NoiseSource,
) -> Result<(Var, LossBundle)> {
    let embedding = tape.param(model.embedding);
    let rec = model.reconstruction_nll(tape, embedding, &example.graph, example.style)?;
    let mut bundle = LossBundle { rec: tape.value(rec).item(), ..Default::default() };
    let mut terms = vec![rec];
    if config.transfer_g || config.transfer_s {
        let target = example.style.flipped();
        let encoded = model.encode(tape, embedding, &example.graph, target)?;
        if config.transfer_g {
            let lt = transfer_loss(tape, &model.d_g, &[encoded.nodes], &[target])?;
            bundle.lt_g = tape.value(lt).item();
            terms.push(tape.scale(lt, config.lambda_g)?);
        }
        if config.transfer_s {
            let state = model.summarise(tape, encoded, &example.graph)?;
            let decode = decode_sample(tape, state, temperature, config.decode_max_len, noise, embedding, &model.rephraser)?;
            let seq = relaxed_sequence(tape, &decode, embedding)?;
            let lt = transfer_loss(tape, &model.d_s, &[seq], &[target])?;
            bundle.lt_s = tape.value(lt).item();
            terms.push(tape.scale(lt, config.lambda_s)?);
        }
    }
    Ok((tape.add_all(&terms)?, bundle))
}

/// Per-sentence transfer objective and its generator gradient.
pub fn transfer_step(
    model: &Gtae,
    store: &ParamStore,
    example: &Example,
    config: &TrainConfig,
    temperature: f64,
    noise: &mut dyn crate::autodiff::NoiseSource,
) -> Result<(ParamGrads, LossBundle)> {
    let mut tape = generator_tape(store);
    let (loss, bundle) = transfer_objective(model, &mut tape, example, config, temperature, noise)?;
    Ok((tape.backward(loss)?.into_params(), bundle))
}

/// Per-sentence `L^c_g + L^c_s` and its classifier gradient.
pub fn classifier_step(model: &Gtae, store: &ParamStore, example: &Example, config: &TrainConfig) -> Result<(ParamGrads, LossBundle)> {
    let mut tape = classifier_tape(store);
    let embedding = tape.param(model.embedding);
    let mut bundle = LossBundle::default();
    let mut terms = Vec::new();
    if config.classifier_g {
        let encoded = model.encode(&mut tape, embedding, &example.graph, example.style)?;
        let lc = classifier_loss(&mut tape, &model.d_g, &[encoded.nodes], &[example.style])?;
        bundle.lc_g = tape.value(lc).item();
        terms.push(lc);
    }
    if config.classifier_s {
        let seq = model.embed(&mut tape, embedding, &example.graph.ids)?;
        let lc = classifier_loss(&mut tape, &model.d_s, &[seq], &[example.style])?;
        bundle.lc_s = tape.value(lc).item();
        terms.push(lc);
    }
    if terms.is_empty() {
        return Ok((ParamGrads::default(), bundle));
    }
    let loss = tape.add_all(&terms)?;
    Ok((tape.backward(loss)?.into_params(), bundle))
}

/// Mean gradient and losses over a batch. Sentences may run on worker
/// threads; the reduction always follows batch order.
fn batch_mean<F>(batch: &[&Example], step: F) -> Result<(ParamGrads, LossBundle)>
where
    F: Fn(usize, &Example) -> Result<(ParamGrads, LossBundle)> + Sync,
{
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let results: Vec<Result<(ParamGrads, LossBundle)>> = batch.par_iter().enumerate().map(|(i, ex)| step(i, ex)).collect();
    let mut total = ParamGrads::default();
    let mut bundles = Vec::with_capacity(batch.len());
    for r in results {
        let (g, b) = r?;
        total.accumulate(&g);
        bundles.push(b);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((total, LossBundle::mean(&bundles)))
}

/// Mean teacher-forced NLL over a batch (no update).
pub fn reconstruction_loss(model: &Gtae, store: &ParamStore, batch: &[&Example]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let losses: Vec<Result<f64>> = batch
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::with_trainable(store, |_| false);
            let embedding = tape.param(model.embedding);
            let nll = model.reconstruction_nll(&mut tape, embedding, &ex.graph, ex.style)?;
            Ok(tape.value(nll).item())
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / batch.len() as f64)
}

fn check_finite(bundle: &LossBundle) -> Result<()> {
    if bundle.all_finite_nonnegative() {
        Ok(())
    } else {
        Err(Error::NonFinite("training loss"))
    }
}

fn shuffled_batches<'a>(data: &'a [Example], config: &TrainConfig, epoch: usize) -> Vec<Vec<&'a Example>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut derive_rng(config.seed, &[SHUFFLE_STREAM, epoch as u64]));
    order.chunks(config.batch_size).map(|c| c.iter().map(|&i| &data[i]).collect()).collect()
}

fn apply(state: &mut ModelState, grads: &ParamGrads, generator: bool) -> Result<()> {
    let ids = if generator { state.model.generator_ids(&state.store) } else { state.model.classifier_ids(&state.store) };
    state.optimizer.step(&mut state.store, grads, &ids)
}

fn generator_update(state: &mut ModelState, batch: &[&Example], config: &TrainConfig, epoch: usize, b: usize, warmup: bool) -> Result<LossBundle> {
    let temperature = config.temperature(state.train_done);
    let (model, store) = (&state.model, &state.store);
    let (grads, bundle) = batch_mean(batch, |i, ex| {
        if warmup {
            reconstruction_step(model, store, ex)
        } else {
            let mut noise = GumbelNoise::new(derive_rng(config.seed, &[NOISE_STREAM, epoch as u64, b as u64, i as u64]));
            transfer_step(model, store, ex, config, temperature, &mut noise)
        }
    })?;
    check_finite(&bundle)?;
    apply(state, &grads, true)?;
    Ok(bundle)
}

fn classifier_update(state: &mut ModelState, batch: &[&Example], config: &TrainConfig) -> Result<LossBundle> {
    if !(config.classifier_g || config.classifier_s) {
        return Ok(LossBundle::default());
    }
    let (model, store) = (&state.model, &state.store);
    let (grads, bundle) = batch_mean(batch, |_, ex| classifier_step(model, store, ex, config))?;
    check_finite(&bundle)?;
    apply(state, &grads, false)?;
    Ok(bundle)
}

fn merge(generator: LossBundle, classifier: LossBundle) -> LossBundle {
    LossBundle { lc_g: classifier.lc_g, lc_s: classifier.lc_s, ..generator }
}

fn run_epoch(state: &mut ModelState, data: &[Example], config: &TrainConfig, warmup: bool) -> Result<LossBundle> {
    if data.is_empty() {
        return Err(Error::Data("no training sentences".into()));
    }
    let epoch = state.epoch();
    let batches = shuffled_batches(data, config, epoch);
    let mut bundles = Vec::with_capacity(batches.len());
    match config.alternation {
        Alternation::Minibatch => {
            for (b, batch) in batches.iter().enumerate() {
                let g = generator_update(state, batch, config, epoch, b, warmup)?;
                let c = classifier_update(state, batch, config)?;
                bundles.push(merge(g, c));
            }
        }
        Alternation::Epoch => {
            let mut gen = Vec::with_capacity(batches.len());
            for (b, batch) in batches.iter().enumerate() {
                gen.push(generator_update(state, batch, config, epoch, b, warmup)?);
            }
            for (batch, g) in batches.iter().zip(gen) {
                let c = classifier_update(state, batch, config)?;
                bundles.push(merge(g, c));
            }
        }
    }
    if warmup {
        state.warmup_done += 1;
    } else {
        state.train_done += 1;
    }
    Ok(LossBundle::mean(&bundles))
}

/// One warm-up epoch: `L_rec` steps for the generator alternating with
/// `L^c_g + L^c_s` steps for the classifiers.
pub fn warmup_epoch(state: &mut ModelState, data: &[Example], config: &TrainConfig) -> Result<LossBundle> {
    run_epoch(state, data, config, true)
}

/// One training epoch: transfer-objective steps (classifiers frozen)
/// alternating with classifier steps (generator frozen). The Gumbel
/// temperature follows [`TrainConfig::temperature`] of the epoch index.
pub fn train_epoch(state: &mut ModelState, data: &[Example], config: &TrainConfig) -> Result<LossBundle> {
    run_epoch(state, data, config, false)
}

/// Greedy transfer of one encoded sentence.
pub fn transfer(state: &ModelState, graph: &crate::graph::LinguisticGraph, target: usize, max_len: usize) -> Result<Vec<usize>> {
    let target = Style::new(target)?;
    state.model.transfer(&state.store, graph, target, max_len)
}

/// Fraction of source positions reproduced exactly, with the longer of the
/// two sequences as denominator.
pub fn token_accuracy(source: &[usize], output: &[usize]) -> f64 {
    let n = source.len().max(output.len());
    if n == 0 {
        return 1.0;
    }
    source.iter().zip(output).filter(|(a, b)| a == b).count() as f64 / n as f64
}

/// Mean same-style greedy reconstruction token accuracy.
pub fn reconstruction_accuracy(state: &ModelState, data: &[Example], max_len: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("no sentences to score".into()));
    }
    let scores: Vec<Result<f64>> = data
        .par_iter()
        .map(|ex| {
            let out = state.model.transfer(&state.store, &ex.graph, ex.style, max_len)?;
            Ok(token_accuracy(&ex.graph.ids, &out))
        })
        .collect();
    let mut sum = 0.0;
    for s in scores {
        sum += s?;
    }
    Ok(sum / data.len() as f64)
}

/// Accuracy of an in-model classifier on real sentences: `D_s` over token
/// embeddings, or `D_g` over own-style SGT encodings.
pub fn classifier_accuracy(state: &ModelState, data: &[Example], graph_level: bool) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("no sentences to score".into()));
    }
    let model = &state.model;
    let hits: Vec<Result<bool>> = data
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::with_trainable(&state.store, |_| false);
            let embedding = tape.param(model.embedding);
            let predicted = if graph_level {
                let enc = model.encode(&mut tape, embedding, &ex.graph, ex.style)?;
                predict(&mut tape, enc.nodes, &model.d_g)?
            } else {
                let seq = model.embed(&mut tape, embedding, &ex.graph.ids)?;
                predict(&mut tape, seq, &model.d_s)?
            };
            Ok(predicted == ex.style)
        })
        .collect();
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    Ok(n as f64 / data.len() as f64)
}

/// Dev-set score: `D_s` accuracy of greedy style-flipped outputs, and mean
/// reconstruction loss.
pub fn validate(state: &ModelState, dev: &[Example], config: &TrainConfig) -> Result<Validation> {
    if dev.is_empty() {
        return Err(Error::Data("empty validation split".into()));
    }
    let model = &state.model;
    let hits: Vec<Result<bool>> = dev
        .par_iter()
        .map(|ex| {
            let target = ex.style.flipped();
            let out = model.transfer(&state.store, &ex.graph, target, config.decode_max_len)?;
            if out.is_empty() {
                return Ok(false);
            }
            let mut tape = Tape::with_trainable(&state.store, |_| false);
            let embedding = tape.param(model.embedding);
            let seq = model.embed(&mut tape, embedding, &out)?;
            Ok(predict(&mut tape, seq, &model.d_s)? == target)
        })
        .collect();
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    let refs: Vec<&Example> = dev.iter().collect();
    Ok(Validation { transfer_accuracy: n as f64 / dev.len() as f64, reconstruction: reconstruction_loss(model, &state.store, &refs)? })
}

/// Which phase an epoch belonged to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Train,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub l_rec: f64,
    pub lc_g: f64,
    pub lc_s: f64,
    pub lt_g: f64,
    pub lt_s: f64,
}

impl From<LossBundle> for EpochLog {
    fn from(b: LossBundle) -> Self {
        EpochLog { l_rec: b.rec, lc_g: b.lc_g, lc_s: b.lc_s, lt_g: b.lt_g, lt_s: b.lt_s }
    }
}

/// Hooks called by [`fit`].
pub trait TrainObserver {
    fn epoch_end(&mut self, _state: &ModelState, _phase: Phase, _log: &EpochLog) -> Result<()> {
        Ok(())
    }

    /// A new best validation score was reached.
    fn improved(&mut self, _state: &ModelState) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Runs the remaining warm-up and training epochs. Training stops early
/// once `patience` validations pass without improvement; the best state
/// seen in this call is restored at the end.
pub fn fit(state: &mut ModelState, data: &Dataset, config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<Vec<EpochLog>> {
    config.validate()?;
    state.optimizer.lr = config.learning_rate;
    let mut logs = Vec::new();
    while state.warmup_done < config.warmup_epochs {
        let log = EpochLog::from(warmup_epoch(state, &data.train, config)?);
        observer.epoch_end(state, Phase::Warmup, &log)?;
        logs.push(log);
    }
    let mut best_snapshot: Option<ModelState> = None;
    while state.train_done < config.train_epochs && (state.stale < config.patience || config.patience == 0) {
        let log = EpochLog::from(train_epoch(state, &data.train, config)?);
        if !data.dev.is_empty() {
            let score = validate(state, &data.dev, config)?;
            if state.best.is_none_or(|b| score.better_than(&b)) {
                state.best = Some(score);
                state.stale = 0;
                best_snapshot = Some(state.clone());
                observer.improved(state)?;
            } else {
                state.stale += 1;
            }
        }
        observer.epoch_end(state, Phase::Train, &log)?;
        logs.push(log);
    }
    if let Some(best) = best_snapshot {
        *state = best;
    }
    Ok(logs)
}

#[cfg(test)]
mod tests;
