use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::conllu::{validate_heads, ParsedSentence};
use super::corpus::{filter_and_encode, CorpusRecord, Dataset, Example, Rejection, DEFAULT_MAX_LEN};
use super::vocab::{build_vocab, DEFAULT_MIN_COUNT};
use super::EdgeFlags;
use crate::autodiff::nn::derive_rng;
use crate::error::{Error, Result};

const SPLIT_STREAM: u64 = 0x5911;

/// Knobs of [`prepare_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub max_len: usize,
    pub min_count: usize,
    pub flags: EdgeFlags,
    /// Train and dev fractions; test gets the rest.
    pub split: (f64, f64),
    pub seed: u64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions { max_len: DEFAULT_MAX_LEN, min_count: DEFAULT_MIN_COUNT, flags: EdgeFlags::default(), split: (0.9, 0.05), seed: 0 }
    }
}

/// Counts reported by [`prepare_dataset`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub input: usize,
    pub kept: usize,
    pub too_long: usize,
    pub empty: usize,
}

/// Pairs corpus records with parses: a record's own `heads` win, otherwise
/// the parse at the same position is used and its tokens must agree.
pub fn attach_parses(records: &[CorpusRecord], parses: Option<&[ParsedSentence]>) -> Result<Vec<ParsedSentence>> {
    if let Some(p) = parses {
        if p.len() != records.len() {
            return Err(Error::Data(format!("{} corpus lines but {} parsed sentences", records.len(), p.len())));
        }
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let heads = match (&r.heads, parses) {
                (Some(h), _) => h.clone(),
                (None, Some(p)) => {
                    if p[i].tokens != r.tokens {
                        return Err(Error::Data(format!("sentence {} differs between corpus and parse file", i + 1)));
                    }
                    p[i].heads.clone()
                }
                (None, None) => return Err(Error::Data(format!("sentence {} has no dependency parse", i + 1))),
            };
            if heads.len() != r.tokens.len() {
                return Err(Error::Structure(format!("sentence {}: {} heads for {} tokens", i + 1, heads.len(), r.tokens.len())));
            }
            if !heads.is_empty() {
                validate_heads(&heads).map_err(|e| Error::Structure(format!("sentence {}: {e}", i + 1)))?;
            }
            Ok(ParsedSentence { tokens: r.tokens.clone(), heads })
        })
        .collect()
}

/// Filters by length, builds the vocabulary on the training split and
/// encodes every split. Split membership depends only on the seed.
pub fn prepare_dataset(records: &[CorpusRecord], parses: &[ParsedSentence], options: &PrepareOptions) -> Result<(Dataset, PrepareReport)> {
    let (train_frac, dev_frac) = options.split;
    if !(train_frac > 0.0 && dev_frac >= 0.0 && train_frac + dev_frac <= 1.0) {
        return Err(Error::Config(format!("invalid split {train_frac}/{dev_frac}")));
    }
    let mut report = PrepareReport { input: records.len(), ..Default::default() };
    let mut kept = Vec::new();
    for (r, p) in records.iter().zip(parses) {
        if p.is_empty() {
            report.empty += 1;
        } else if p.len() > options.max_len {
            report.too_long += 1;
        } else {
            kept.push((r.style, p));
        }
    }
    report.kept = kept.len();
    if kept.is_empty() {
        return Err(Error::Data("no sentences survived filtering".into()));
    }
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(&mut derive_rng(options.seed, &[SPLIT_STREAM]));
    let n = kept.len();
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n);
    let n_dev = ((n as f64 * dev_frac).round() as usize).min(n - n_train);
    let (train_idx, rest) = order.split_at(n_train);
    let (dev_idx, test_idx) = rest.split_at(n_dev);

    let vocab = build_vocab(train_idx.iter().map(|&i| kept[i].1.tokens.as_slice()), options.min_count)?;
    let encode = |idx: &[usize]| -> Result<Vec<Example>> {
        idx.iter()
            .map(|&i| {
                let (style, p) = kept[i];
                let graph = filter_and_encode(p, &vocab, options.max_len, options.flags).map_err(|r| match r {
                    Rejection::Empty => Error::Data("empty sentence after filtering".into()),
                    Rejection::TooLong { len, max_len } => Error::Data(format!("sentence of {len} > {max_len} after filtering")),
                })?;
                Ok(Example { tokens: p.tokens.clone(), graph, style })
            })
            .collect()
    };
    let dataset = Dataset { train: encode(train_idx)?, dev: encode(dev_idx)?, test: encode(test_idx)?, vocab, flags: options.flags };
    Ok((dataset, report))
}
