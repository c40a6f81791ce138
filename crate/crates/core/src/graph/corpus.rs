use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adjacency::{build_adjacency, Adjacency, EdgeFlags};
use super::conllu::{validate_heads, ParsedSentence};
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Default maximum sentence length kept by preprocessing.
pub const DEFAULT_MAX_LEN: usize = 15;

/// Binary style label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Style(u8);

impl Style {
    pub const ZERO: Style = Style(0);
    pub const ONE: Style = Style(1);
    pub const ALL: [Style; 2] = [Style::ZERO, Style::ONE];

    pub fn new(label: usize) -> Result<Self> {
        match label {
            0 | 1 => Ok(Style(label as u8)),
            _ => Err(Error::InvalidArgument(format!("style label must be 0 or 1, got {label}"))),
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn flipped(self) -> Style {
        Style(1 - self.0)
    }
}

impl TryFrom<usize> for Style {
    type Error = Error;
    fn try_from(v: usize) -> Result<Self> {
        Style::new(v)
    }
}

impl From<Style> for usize {
    fn from(s: Style) -> usize {
        s.index()
    }
}

/// Token ids of a sentence together with its dependency adjacency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinguisticGraph {
    pub ids: Vec<usize>,
    pub heads: Vec<usize>,
    pub adjacency: Adjacency,
}

impl LinguisticGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Why a sentence was dropped by [`filter_and_encode`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rejection {
    Empty,
    TooLong { len: usize, max_len: usize },
}

/// Encodes `sentence` with `vocab`, rejecting empty sentences and those with
/// more than `max_len` tokens.
pub fn filter_and_encode(
    sentence: &ParsedSentence,
    vocab: &Vocab,
    max_len: usize,
    flags: EdgeFlags,
) -> std::result::Result<LinguisticGraph, Rejection> {
    let k = sentence.len();
    if k == 0 {
        return Err(Rejection::Empty);
    }
    if k > max_len {
        return Err(Rejection::TooLong { len: k, max_len });
    }
    Ok(LinguisticGraph {
        ids: vocab.encode(&sentence.tokens),
        heads: sentence.heads.clone(),
        adjacency: build_adjacency(&sentence.heads, flags),
    })
}

/// One training sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub graph: LinguisticGraph,
    pub style: Style,
}

/// Sentences sharing one style label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StyledCorpus {
    pub style: Style,
    pub examples: Vec<Example>,
}

impl StyledCorpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Splits a mixed list into the two style corpora.
pub fn by_style(examples: &[Example]) -> [StyledCorpus; 2] {
    Style::ALL.map(|style| StyledCorpus {
        style,
        examples: examples.iter().filter(|e| e.style == style).cloned().collect(),
    })
}

/// One line of a raw corpus file. `heads` is optional; without it the parse
/// must come from an aligned CoNLL-U file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub tokens: Vec<String>,
    pub style: Style,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<Vec<usize>>,
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: PathBuf::from(path),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus file, lowercasing tokens.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let mut recs: Vec<CorpusRecord> = read_jsonl(path)?;
    for r in &mut recs {
        for t in &mut r.tokens {
            *t = t.to_lowercase();
        }
    }
    Ok(recs)
}

/// Persisted form of an encoded example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct EncodedRecord {
    tokens: Vec<String>,
    ids: Vec<usize>,
    heads: Vec<usize>,
    style: Style,
}

pub fn save_examples(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let recs: Vec<EncodedRecord> = examples
        .iter()
        .map(|e| EncodedRecord {
            tokens: e.tokens.clone(),
            ids: e.graph.ids.clone(),
            heads: e.graph.heads.clone(),
            style: e.style,
        })
        .collect();
    write_jsonl(path, &recs)
}

pub fn load_examples(path: impl AsRef<Path>, flags: EdgeFlags) -> Result<Vec<Example>> {
    let recs: Vec<EncodedRecord> = read_jsonl(path)?;
    recs.into_iter()
        .map(|r| {
            if r.ids.len() != r.tokens.len() || r.heads.len() != r.tokens.len() {
                return Err(Error::Data("encoded record has inconsistent lengths".into()));
            }
            validate_heads(&r.heads).map_err(Error::Structure)?;
            Ok(Example {
                graph: LinguisticGraph { adjacency: build_adjacency(&r.heads, flags), ids: r.ids, heads: r.heads },
                tokens: r.tokens,
                style: r.style,
            })
        })
        .collect()
}

/// Encoded train/dev/test splits with their vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub flags: EdgeFlags,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    flags: EdgeFlags,
    vocab_hash: String,
    train: usize,
    dev: usize,
    test: usize,
}

impl Dataset {
    pub const VOCAB_FILE: &'static str = "vocab.txt";

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.vocab.save(dir.join(Self::VOCAB_FILE))?;
        save_examples(dir.join("train.jsonl"), &self.train)?;
        save_examples(dir.join("dev.jsonl"), &self.dev)?;
        save_examples(dir.join("test.jsonl"), &self.test)?;
        let meta = DatasetMeta {
            flags: self.flags,
            vocab_hash: self.vocab.hash(),
            train: self.train.len(),
            dev: self.dev.len(),
            test: self.test.len(),
        };
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
        let vocab = Vocab::load(dir.join(Self::VOCAB_FILE))?;
        if vocab.hash() != meta.vocab_hash {
            return Err(Error::Data("vocabulary does not match dataset.json".into()));
        }
        let ds = Dataset {
            train: load_examples(dir.join("train.jsonl"), meta.flags)?,
            dev: load_examples(dir.join("dev.jsonl"), meta.flags)?,
            test: load_examples(dir.join("test.jsonl"), meta.flags)?,
            vocab,
            flags: meta.flags,
        };
        if (ds.train.len(), ds.dev.len(), ds.test.len()) != (meta.train, meta.dev, meta.test) {
            return Err(Error::Data("split sizes do not match dataset.json".into()));
        }
        Ok(ds)
    }

    /// Re-derives every adjacency with new edge flags.
    pub fn with_flags(&self, flags: EdgeFlags) -> Dataset {
        let rebuild = |xs: &[Example]| {
            xs.iter()
                .map(|e| {
                    let mut e = e.clone();
                    e.graph.adjacency = build_adjacency(&e.graph.heads, flags);
                    e
                })
                .collect()
        };
        Dataset { vocab: self.vocab.clone(), flags, train: rebuild(&self.train), dev: rebuild(&self.dev), test: rebuild(&self.test) }
    }
}
