use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Default frequency below which a word is replaced by `<unk>`.
pub const DEFAULT_MIN_COUNT: usize = 5;

/// Token/id bijection with four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Data(format!("vocabulary must start with {:?}", SPECIALS)));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIALS.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Ordinary (non-reserved) tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIALS.len()..]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Inverse of [`Vocab::encode`]; stops at `<eos>` and drops padding and
    /// `<bos>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.tokens[i].clone())
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the persisted form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Builds a vocabulary from tokenised sentences. Words occurring fewer than
/// `min_count` times are left out; ids are assigned by descending frequency,
/// ties broken lexicographically.
pub fn build_vocab<'a, I, S>(sentences: I, min_count: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut seen_any = false;
    for sentence in sentences {
        seen_any = true;
        for t in sentence {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    if !seen_any {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut kept: Vec<(&str, usize)> =
        counts.into_iter().filter(|&(t, c)| c >= min_count && !SPECIALS.contains(&t)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(kept.into_iter().map(|(t, _)| t.to_string())).collect();
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(spec: &[(&str, usize)]) -> Vec<Vec<String>> {
        spec.iter().flat_map(|&(w, n)| std::iter::repeat_n(vec![w.to_string()], n)).collect()
    }

    fn vocab_of(c: &[Vec<String>], min_count: usize) -> Vocab {
        build_vocab(c.iter().map(Vec::as_slice), min_count).unwrap()
    }

    #[test]
    fn frequency_threshold() {
        let c = corpus(&[("rare", 4), ("common", 5)]);
        let v = vocab_of(&c, DEFAULT_MIN_COUNT);
        assert!(!v.contains("rare"));
        assert_eq!(v.id("rare"), UNK);
        assert!(v.contains("common"));
    }

    #[test]
    fn ties_are_lexicographic() {
        let c = corpus(&[("zeta", 6), ("alpha", 6), ("most", 9)]);
        let v = vocab_of(&c, 1);
        assert_eq!(v.words(), ["most", "alpha", "zeta"]);
        assert_eq!(v.id("alpha"), 5);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let c: Vec<Vec<String>> = Vec::new();
        assert!(build_vocab(c.iter().map(Vec::as_slice), 1).is_err());
    }

    #[test]
    fn text_round_trip_and_hash() {
        let c = corpus(&[("a", 3), ("b", 2)]);
        let v = vocab_of(&c, 1);
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert_ne!(vocab_of(&c, 3).hash(), v.hash());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in prop::collection::vec("[a-e]{1,2}", 1..30)) {
            let c = vec![words.clone()];
            let v = vocab_of(&c, 2);
            for i in 0..v.len() {
                prop_assert_eq!(v.id(v.token(i)), i);
            }
            let decoded = v.decode(&v.encode(&words));
            prop_assert_eq!(decoded.len(), words.len());
            for (d, w) in decoded.iter().zip(&words) {
                if v.contains(w) {
                    prop_assert_eq!(d, w);
                } else {
                    prop_assert_eq!(d.as_str(), SPECIALS[UNK]);
                }
            }
        }

        #[test]
        fn construction_is_deterministic(words in prop::collection::vec("[a-z]{1,3}", 1..60)) {
            let c = vec![words.clone()];
            let mut reversed = words.clone();
            reversed.reverse();
            prop_assert_eq!(vocab_of(&c, 1).to_text(), vocab_of(&[reversed], 1).to_text());
        }
    }
}
