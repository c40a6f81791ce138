//! Style lexicon: the words a bag-of-words logistic model leans on most.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Style;

pub const LEXICON_FRACTION: f64 = 0.10;
pub const LEXICON_CAP: usize = 200;
const EPOCHS: usize = 200;
const L2: f64 = 1e-4;
const STEP: f64 = 0.5;

/// Style-bearing words with the weight the fitted model gave them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StyleLexicon {
    weights: BTreeMap<String, f64>,
}

impl StyleLexicon {
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        StyleLexicon { weights: words.iter().map(|w| (w.as_ref().to_string(), 0.0)).collect() }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.weights.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Words in lexicographic order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    /// Fitted weight; positive values point to style one.
    pub fn weight(&self, token: &str) -> Option<f64> {
        self.weights.get(token).copied()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Fits `P(style one | counts)` by full-batch gradient descent from zero
/// and returns every feature's weight.
pub fn fit_bag_of_words<'a, I>(sentences: I) -> Result<BTreeMap<String, f64>>
where
    I: IntoIterator<Item = (&'a [String], Style)>,
{
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut rows: Vec<(BTreeMap<usize, f64>, f64)> = Vec::new();
    let sentences: Vec<(&[String], Style)> = sentences.into_iter().collect();
    for (tokens, _) in &sentences {
        for t in tokens.iter() {
            let next = index.len();
            index.entry(t.as_str()).or_insert(next);
        }
    }
    if index.is_empty() {
        return Err(Error::Data("cannot build a lexicon from an empty vocabulary".into()));
    }
    for (tokens, style) in &sentences {
        let mut counts = BTreeMap::new();
        for t in tokens.iter() {
            *counts.entry(index[t.as_str()]).or_insert(0.0) += 1.0;
        }
        rows.push((counts, style.index() as f64));
    }
    let n = rows.len() as f64;
    let mut w = vec![0.0; index.len()];
    let mut bias = 0.0;
    for _ in 0..EPOCHS {
        let mut grad: Vec<f64> = w.iter().map(|x| L2 * x).collect();
        let mut grad_bias = 0.0;
        for (x, y) in &rows {
            let z = bias + x.iter().map(|(&j, &c)| w[j] * c).sum::<f64>();
            let err = (1.0 / (1.0 + (-z).exp()) - y) / n;
            grad_bias += err;
            for (&j, &c) in x {
                grad[j] += err * c;
            }
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= STEP * gj;
        }
        bias -= STEP * grad_bias;
    }
    Ok(index.into_iter().map(|(t, j)| (t.to_string(), w[j])).collect())
}

/// The `round(top_fraction * features)` words with the largest absolute
/// weight (at least one, at most [`LEXICON_CAP`]); ties go to the
/// lexicographically smaller word.
pub fn build_style_lexicon<'a, I>(sentences: I, top_fraction: f64) -> Result<StyleLexicon>
where
    I: IntoIterator<Item = (&'a [String], Style)>,
{
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!("lexicon fraction must lie in (0, 1], got {top_fraction}")));
    }
    Ok(select_lexicon(fit_bag_of_words(sentences)?, top_fraction))
}

/// The selection rule of [`build_style_lexicon`] applied to given weights.
pub fn select_lexicon(weights: BTreeMap<String, f64>, top_fraction: f64) -> StyleLexicon {
    let size = ((weights.len() as f64 * top_fraction).round() as usize).clamp(1, LEXICON_CAP);
    let mut ranked: Vec<(String, f64)> = weights.into_iter().collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(size);
    StyleLexicon { weights: ranked.into_iter().collect() }
}
