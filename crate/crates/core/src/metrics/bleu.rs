//! Corpus-level BLEU against a single reference per hypothesis.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Printed in report headers.
pub const SMOOTHING_NOTE: &str = "add-one smoothing on 2- to 4-gram precisions";

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and hypothesis n-gram totals per order, summed over
/// the corpus, plus hypothesis and reference lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> Self {
        let mut stats = BleuStats { hyp_len: hypothesis.len(), ref_len: reference.len(), ..Default::default() };
        for n in 1..=MAX_ORDER {
            let refs = ngrams(reference, n);
            for (gram, count) in ngrams(hypothesis, n) {
                stats.matches[n - 1] += count.min(refs.get(&gram).copied().unwrap_or(0));
                stats.totals[n - 1] += count;
            }
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Score on a 0..100 scale.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_sum = (self.matches[0] as f64 / self.totals[0] as f64).ln();
        for n in 1..MAX_ORDER {
            log_sum += ((self.matches[n] + 1) as f64 / (self.totals[n] + 1) as f64).ln();
        }
        let brevity = if self.hyp_len > self.ref_len { 1.0 } else { (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp() };
        100.0 * brevity * (log_sum / MAX_ORDER as f64).exp()
    }
}

pub fn corpus_bleu<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<S>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidArgument("BLEU of an empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!("{} hypotheses for {} references", hypotheses.len(), references.len())));
    }
    let mut total = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&BleuStats::of(h, r));
    }
    Ok(total.score())
}
