//! TextCNN style classifiers and the four classification objectives.
//!
//! `D_g` reads SGT node sequences, `D_s` reads token-embedding sequences.
//! Each loss decides its own gradient routing: the classifier side of a
//! transfer loss is loaded as constants, and the inputs of a classifier
//! loss are detached, so every objective reaches only its own parameters
//! whatever the tape's trainable set.

use crate::autodiff::nn::{init_matrix, SeededRng};
use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{Style, EOS};
use crate::rephraser::DecodeOutput;

pub const FILTER_WIDTHS: [usize; 3] = [3, 4, 5];

/// Convolution over `width` consecutive rows, stored as a `width*d x maps`
/// matrix acting on flattened windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvFilter {
    pub width: usize,
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextCnn {
    pub filters: Vec<ConvFilter>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl TextCnn {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, group: ParamGroup, d: usize, maps: usize) -> Self {
        let filters = FILTER_WIDTHS
            .iter()
            .map(|&width| ConvFilter {
                width,
                w: store.add(format!("{name}.conv{width}.w"), group, init_matrix(rng, width * d, maps)),
                b: store.add(format!("{name}.conv{width}.b"), group, Tensor::zeros(&[1, maps])),
            })
            .collect();
        let features = FILTER_WIDTHS.len() * maps;
        TextCnn {
            filters,
            out_w: store.add(format!("{name}.out.w"), group, init_matrix(rng, features, 2)),
            out_b: store.add(format!("{name}.out.b"), group, Tensor::zeros(&[1, 2])),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.filters.iter().flat_map(|f| [f.w, f.b]).chain([self.out_w, self.out_b]).collect()
    }
}

fn load(tape: &mut Tape, id: ParamId, frozen: bool) -> Var {
    if frozen {
        tape.param_frozen(id)
    } else {
        tape.param(id)
    }
}

fn forward(tape: &mut Tape, seq: Var, clf: &TextCnn, frozen: bool) -> Result<Var> {
    if tape.value(seq).rows() == 0 {
        return Err(Error::shape("textcnn_forward", "empty sequence"));
    }
    let mut pooled = Vec::with_capacity(clf.filters.len());
    for f in &clf.filters {
        // wide convolution: every row is seen at every filter offset
        let win = tape.windows(seq, f.width, f.width - 1)?;
        let (w, b) = (load(tape, f.w, frozen), load(tape, f.b, frozen));
        let h = tape.affine(win, w, b)?;
        let h = tape.relu(h)?;
        pooled.push(tape.max_rows(h)?);
    }
    let features = tape.concat_cols(&pooled)?;
    let (w, b) = (load(tape, clf.out_w, frozen), load(tape, clf.out_b, frozen));
    tape.affine(features, w, b)
}

/// Conv -> relu -> max-over-time per width -> concat -> affine. Returns
/// `1 x 2` logits.
pub fn textcnn_forward(tape: &mut Tape, seq: Var, clf: &TextCnn) -> Result<Var> {
    forward(tape, seq, clf, false)
}

/// Same as [`textcnn_forward`] with the classifier held fixed.
pub fn textcnn_forward_frozen(tape: &mut Tape, seq: Var, clf: &TextCnn) -> Result<Var> {
    forward(tape, seq, clf, true)
}

/// Predicted label for a sequence.
pub fn predict(tape: &mut Tape, seq: Var, clf: &TextCnn) -> Result<Style> {
    let logits = textcnn_forward_frozen(tape, seq, clf)?;
    Style::new(tape.value(logits).argmax_row(0))
}

fn mean_loss(tape: &mut Tape, clf: &TextCnn, seqs: &[Var], labels: &[Style], frozen: bool) -> Result<Var> {
    if seqs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} sequences for {} labels", seqs.len(), labels.len())));
    }
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("no sequences to classify".into()));
    }
    let mut terms = Vec::with_capacity(seqs.len());
    for (&s, label) in seqs.iter().zip(labels) {
        let logits = forward(tape, s, clf, frozen)?;
        terms.push(tape.cross_entropy(logits, &[label.index()])?);
    }
    let total = tape.add_all(&terms)?;
    tape.scale(total, 1.0 / seqs.len() as f64)
}

/// Mean cross-entropy with the classifier trainable and inputs detached.
pub fn classifier_loss(tape: &mut Tape, clf: &TextCnn, seqs: &[Var], labels: &[Style]) -> Result<Var> {
    let detached: Vec<Var> = seqs.iter().map(|&s| tape.detach(s)).collect();
    mean_loss(tape, clf, &detached, labels, false)
}

/// Mean cross-entropy with the classifier frozen; gradients reach the inputs.
pub fn transfer_loss(tape: &mut Tape, clf: &TextCnn, seqs: &[Var], targets: &[Style]) -> Result<Var> {
    mean_loss(tape, clf, seqs, targets, true)
}

/// `(L^c_g, L^t_g)`: `D_g` on own-style encodings against their labels,
/// and on style-flipped encodings against the flipped labels.
pub fn graph_classifier_losses(
    tape: &mut Tape,
    d_g: &TextCnn,
    same_style: &[Var],
    transferred: &[Var],
    labels: &[Style],
) -> Result<(Var, Var)> {
    let targets: Vec<Style> = labels.iter().map(|s| s.flipped()).collect();
    let lc = classifier_loss(tape, d_g, same_style, labels)?;
    let lt = transfer_loss(tape, d_g, transferred, &targets)?;
    Ok((lc, lt))
}

/// `D_s` input for a relaxed decode: relaxed rows times the embedding
/// table, dropping a trailing `<eos>` step when other rows remain.
///
/// The table is read as a constant, so gradients reach the decoder through
/// the relaxed rows only and cannot move word vectors to fool `D_s`.
pub fn relaxed_sequence(tape: &mut Tape, decode: &DecodeOutput, embedding: Var) -> Result<Var> {
    let mut rows = decode.ids.len();
    if rows > 1 && decode.ids.last() == Some(&EOS) {
        rows -= 1;
    }
    let relaxed = tape.slice_rows(decode.relaxed, 0, rows)?;
    let table = tape.detach(embedding);
    tape.matmul(relaxed, table)
}

/// `(L^c_s, L^t_s)`: `D_s` on real sentences (embedded ids) against their
/// labels, and on relaxed decodes against the flipped labels.
pub fn sentence_classifier_losses(
    tape: &mut Tape,
    d_s: &TextCnn,
    real_sentences: &[Var],
    transferred: &[DecodeOutput],
    embedding: Var,
    labels: &[Style],
) -> Result<(Var, Var)> {
    let targets: Vec<Style> = labels.iter().map(|s| s.flipped()).collect();
    let lc = classifier_loss(tape, d_s, real_sentences, labels)?;
    let seqs = transferred.iter().map(|d| relaxed_sequence(tape, d, embedding)).collect::<Result<Vec<_>>>()?;
    let lt = transfer_loss(tape, d_s, &seqs, &targets)?;
    Ok((lc, lt))
}

/// Named per-batch scalars of every objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub rec: f64,
    pub lc_g: f64,
    pub lt_g: f64,
    pub lc_s: f64,
    pub lt_s: f64,
}

impl LossBundle {
    pub fn all_finite_nonnegative(&self) -> bool {
        [self.rec, self.lc_g, self.lt_g, self.lc_s, self.lt_s].iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    /// Element-wise mean of several bundles.
    pub fn mean(items: &[LossBundle]) -> LossBundle {
        if items.is_empty() {
            return LossBundle::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&LossBundle) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBundle {
            rec: sum(|b| b.rec),
            lc_g: sum(|b| b.lc_g),
            lt_g: sum(|b| b.lt_g),
            lc_s: sum(|b| b.lc_s),
            lt_s: sum(|b| b.lt_s),
        }
    }
}
