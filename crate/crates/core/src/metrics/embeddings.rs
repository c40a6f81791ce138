//! Word vectors for the transport cost: positive PMI co-occurrence
//! statistics factorised by a symmetric eigendecomposition, or loaded from
//! a text file with one `token v1 v2 ...` line per word.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 50;
pub const COOCCURRENCE_WINDOW: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddings {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl WordEmbeddings {
    pub fn new(dim: usize, vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::shape("WordEmbeddings::new", format!("{w} has {} values, expected {dim}", v.len())));
        }
        Ok(WordEmbeddings { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Euclidean distance; a token without a vector sits at the origin.
    pub fn distance(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 0.0;
        }
        let zero = vec![0.0; self.dim];
        let x = self.get(a).unwrap_or(&zero);
        let y = self.get(b).unwrap_or(&zero);
        x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, v) in &self.vectors {
            out.push_str(w);
            for x in v {
                out.push_str(&format!(" {x}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut dim = None;
        let mut vectors = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: n + 1, msg };
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts.map(str::parse::<f64>).collect::<std::result::Result<Vec<_>, _>>().map_err(|e| err(e.to_string()))?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => return Err(err(format!("{} values, expected {d}", values.len()))),
                _ => {}
            }
            if vectors.insert(word.to_string(), values).is_some() {
                return Err(err(format!("duplicate token {word}")));
            }
        }
        let dim = dim.ok_or_else(|| Error::Data(format!("{} holds no vectors", path.display())))?;
        WordEmbeddings::new(dim, vectors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, path)
    }
}

/// Positive PMI of symmetric `window` co-occurrence counts.
fn ppmi(sentences: &[Vec<String>], words: &[String], window: usize) -> DMatrix<f64> {
    let index: BTreeMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let n = words.len();
    let mut counts = DMatrix::<f64>::zeros(n, n);
    for s in sentences {
        let ids: Vec<usize> = s.iter().map(|t| index[t.as_str()]).collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in ids.iter().skip(i + 1).take(window) {
                counts[(a, b)] += 1.0;
                counts[(b, a)] += 1.0;
            }
        }
    }
    let total: f64 = counts.sum();
    let rows: Vec<f64> = (0..n).map(|i| counts.row(i).sum()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        let c = counts[(i, j)];
        if c == 0.0 {
            0.0
        } else {
            (c * total / (rows[i] * rows[j])).ln().max(0.0)
        }
    })
}

/// Trains `dim`-dimensional vectors for every word of `sentences`.
///
/// Eigenvectors of the PPMI matrix are ranked by eigenvalue magnitude and
/// scaled by its square root; each is sign-normalised so its largest
/// component is positive. Dimensions beyond the vocabulary size are zero.
pub fn train_embeddings(sentences: &[Vec<String>], dim: usize, window: usize) -> Result<WordEmbeddings> {
    let words: Vec<String> = sentences.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if words.is_empty() {
        return Err(Error::Data("no words to embed".into()));
    }
    if dim == 0 || window == 0 {
        return Err(Error::Config("embedding dimension and window must be positive".into()));
    }
    let eigen = SymmetricEigen::new(ppmi(sentences, &words, window));
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].abs().total_cmp(&eigen.eigenvalues[a].abs()).then(a.cmp(&b)));
    let mut vectors: BTreeMap<String, Vec<f64>> = words.iter().map(|w| (w.clone(), vec![0.0; dim])).collect();
    for (k, &c) in order.iter().take(dim).enumerate() {
        let column = eigen.eigenvectors.column(c);
        let pivot = column.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let scale = eigen.eigenvalues[c].abs().sqrt() * if pivot < 0.0 { -1.0 } else { 1.0 };
        for (i, w) in words.iter().enumerate() {
            vectors.get_mut(w).expect("word present")[k] = column[i] * scale;
        }
    }
    WordEmbeddings::new(dim, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<Vec<String>> {
        ["the cat sat", "the dog sat", "a cat ran", "a dog ran", "the bird flew"]
            .iter()
            .map(|s| s.split(' ').map(String::from).collect())
            .collect()
    }

    #[test]
    fn distributionally_similar_words_are_close() {
        let e = train_embeddings(&corpus(), 8, 2).unwrap();
        assert_eq!(e.dim(), 8);
        assert_eq!(e.len(), 8);
        assert!(e.distance("cat", "dog") < e.distance("cat", "flew"));
        assert_eq!(e.distance("cat", "cat"), 0.0);
        assert!((e.distance("cat", "dog") - e.distance("dog", "cat")).abs() < 1e-15);
    }

    #[test]
    fn training_is_deterministic() {
        assert_eq!(train_embeddings(&corpus(), 5, 2).unwrap(), train_embeddings(&corpus(), 5, 2).unwrap());
    }

    #[test]
    fn text_round_trip_and_errors() {
        let e = train_embeddings(&corpus(), 4, 1).unwrap();
        let back = WordEmbeddings::parse(&e.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, e);
        assert!(WordEmbeddings::parse("a 1 2\nb 1\n", Path::new("x")).is_err());
        assert!(WordEmbeddings::parse("a 1 x\n", Path::new("x")).is_err());
        assert!(WordEmbeddings::parse("", Path::new("x")).is_err());
    }

    #[test]
    fn missing_words_sit_at_the_origin() {
        let mut v = BTreeMap::new();
        v.insert("a".to_string(), vec![3.0, 4.0]);
        let e = WordEmbeddings::new(2, v).unwrap();
        assert_eq!(e.distance("a", "zzz"), 5.0);
    }
}
