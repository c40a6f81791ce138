//! Corpus evaluation: every metric for a set of transfers, the artifacts
//! the metrics depend on, and the report file.
//!
//! A report file is a human-readable table followed by a marker line and
//! line-delimited JSON: one summary object, then one object per sentence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bleu::{corpus_bleu, SMOOTHING_NOTE};
use super::classifier::{accuracy, labelled_ids, per_sentence_emd, train_eval_classifier, EvalClassifier, EvalClassifierConfig, StyleScorer};
use super::embeddings::{train_embeddings, WordEmbeddings, COOCCURRENCE_WINDOW, EMBEDDING_DIM};
use super::lexicon::{build_style_lexicon, StyleLexicon, LEXICON_FRACTION};
use super::transport::masked_wmd;
use crate::error::{Error, Result};
use crate::graph::{Dataset, Style, Vocab};

pub const JSONL_MARKER: &str = "--- jsonl ---";
pub const NOT_COMPUTED: &str = "n/a (requires external pretrained models)";

/// One transfer to score.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transfer {
    pub source: Vec<String>,
    pub output: Vec<String>,
    pub target: Style,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceMetrics {
    pub index: usize,
    pub target: usize,
    pub source: String,
    pub output: String,
    pub p_target_in: f64,
    pub p_target_out: f64,
    pub hit: bool,
    pub emd: f64,
    pub masked_wmd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accu: f64,
    pub emd: f64,
    /// Mean over sentences with a non-empty masked side on both ends;
    /// `None` when every sentence was skipped.
    pub masked_wmd: Option<f64>,
    pub bleu: f64,
    pub skipped_empty_after_mask: usize,
    pub sentences: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub summary: MetricSummary,
    pub sentences: Vec<SentenceMetrics>,
}

/// Everything the metrics need besides the transfers themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalArtifacts {
    pub vocab: Vocab,
    pub classifier: EvalClassifier,
    pub lexicon: StyleLexicon,
    pub embeddings: WordEmbeddings,
    pub dataset_hash: String,
}

#[derive(Serialize, Deserialize)]
struct ArtifactMeta {
    dataset_hash: String,
}

const META_FILE: &str = "artifacts.json";
const CLASSIFIER_FILE: &str = "eval_classifier.json";
const LEXICON_FILE: &str = "lexicon.json";
const EMBEDDINGS_FILE: &str = "embeddings.txt";
const VOCAB_FILE: &str = "vocab.txt";

/// Digest of the vocabulary and labelled training split.
pub fn dataset_hash(data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(data.vocab.hash().as_bytes());
    for ex in &data.train {
        h.update([ex.style.index() as u8]);
        h.update(ex.tokens.join(" ").as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

impl EvalArtifacts {
    /// Trains the classifier, lexicon and embeddings on the training split.
    pub fn prepare(data: &Dataset, config: EvalClassifierConfig) -> Result<Self> {
        let rendered: Vec<Vec<String>> = data.train.iter().map(|e| data.vocab.decode(&e.graph.ids)).collect();
        let lexicon = build_style_lexicon(rendered.iter().zip(&data.train).map(|(t, e)| (t.as_slice(), e.style)), LEXICON_FRACTION)?;
        let embeddings = train_embeddings(&rendered, EMBEDDING_DIM, COOCCURRENCE_WINDOW)?;
        let classifier = train_eval_classifier(&labelled_ids(&data.train), data.vocab.len(), config)?;
        Ok(EvalArtifacts { vocab: data.vocab.clone(), classifier, lexicon, embeddings, dataset_hash: dataset_hash(data) })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.vocab.save(dir.join(VOCAB_FILE))?;
        self.classifier.save(dir.join(CLASSIFIER_FILE))?;
        self.lexicon.save(dir.join(LEXICON_FILE))?;
        self.embeddings.save(dir.join(EMBEDDINGS_FILE))?;
        // written last so a partial directory never looks complete
        fs::write(dir.join(META_FILE), serde_json::to_string(&ArtifactMeta { dataset_hash: self.dataset_hash.clone() })?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: ArtifactMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        let vocab = Vocab::load(dir.join(VOCAB_FILE))?;
        let classifier = EvalClassifier::load(dir.join(CLASSIFIER_FILE))?;
        if classifier.vocab_size() != vocab.len() {
            return Err(Error::Data(format!("classifier expects {} tokens, vocabulary has {}", classifier.vocab_size(), vocab.len())));
        }
        Ok(EvalArtifacts {
            vocab,
            classifier,
            lexicon: StyleLexicon::load(dir.join(LEXICON_FILE))?,
            embeddings: WordEmbeddings::load(dir.join(EMBEDDINGS_FILE))?,
            dataset_hash: meta.dataset_hash,
        })
    }

    /// Reuses the artifacts in `dir` when they were built from `data`,
    /// otherwise rebuilds and stores them.
    pub fn load_or_prepare(dir: impl AsRef<Path>, data: &Dataset, config: EvalClassifierConfig) -> Result<Self> {
        let dir = dir.as_ref();
        if dir.join(META_FILE).exists() {
            let cached = Self::load(dir)?;
            if cached.dataset_hash == dataset_hash(data) && *cached.classifier.config() == config {
                return Ok(cached);
            }
        }
        let fresh = Self::prepare(data, config)?;
        fresh.save(dir)?;
        Ok(fresh)
    }
}

/// Scores every transfer and assembles the corpus report.
pub fn evaluate_run(transfers: &[Transfer], artifacts: &EvalArtifacts) -> Result<MetricReport> {
    evaluate_with(transfers, &artifacts.vocab, &artifacts.classifier, &artifacts.lexicon, &artifacts.embeddings)
}

/// [`evaluate_run`] with each artifact supplied separately.
pub fn evaluate_with<C: StyleScorer>(
    transfers: &[Transfer],
    vocab: &Vocab,
    classifier: &C,
    lexicon: &StyleLexicon,
    embeddings: &WordEmbeddings,
) -> Result<MetricReport> {
    if transfers.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let outputs: Vec<Vec<usize>> = transfers.iter().map(|t| vocab.encode(&t.output)).collect();
    let targets: Vec<Style> = transfers.iter().map(|t| t.target).collect();
    let rows: Vec<Result<SentenceMetrics>> = transfers
        .par_iter()
        .zip(&outputs)
        .enumerate()
        .map(|(index, (t, out_ids))| {
            let p_in = classifier.posterior(&vocab.encode(&t.source))?;
            let p_out = classifier.posterior(out_ids)?;
            let k = t.target.index();
            Ok(SentenceMetrics {
                index,
                target: k,
                source: t.source.join(" "),
                output: t.output.join(" "),
                p_target_in: p_in[k],
                p_target_out: p_out[k],
                hit: !out_ids.is_empty() && p_out[k] > p_out[1 - k],
                // an empty output has not moved toward anything
                emd: if out_ids.is_empty() { 0.0 } else { per_sentence_emd(&p_in, &p_out, t.target) },
                masked_wmd: masked_wmd(&t.source, &t.output, lexicon, embeddings)?,
            })
        })
        .collect();
    let sentences = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let n = sentences.len();
    let wmds: Vec<f64> = sentences.iter().filter_map(|s| s.masked_wmd).collect();
    let summary = MetricSummary {
        accu: accuracy(&outputs, &targets, classifier)?,
        emd: sentences.iter().map(|s| s.emd).sum::<f64>() / n as f64,
        masked_wmd: (!wmds.is_empty()).then(|| wmds.iter().sum::<f64>() / wmds.len() as f64),
        bleu: corpus_bleu(
            &transfers.iter().map(|t| t.output.clone()).collect::<Vec<_>>(),
            &transfers.iter().map(|t| t.source.clone()).collect::<Vec<_>>(),
        )?,
        skipped_empty_after_mask: n - wmds.len(),
        sentences: n,
    };
    Ok(MetricReport { summary, sentences })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "skipped".to_string(), |v| format!("{v:.4}"))
}

impl MetricReport {
    pub fn to_text(&self) -> Result<String> {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "evaluation report ({} sentences)", s.sentences);
        let _ = writeln!(out, "bleu: {SMOOTHING_NOTE}");
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<28} {}", "metric", "value");
        let _ = writeln!(out, "{:<28} {:.4}", "ACCU", s.accu);
        let _ = writeln!(out, "{:<28} {:.4}", "EMD", s.emd);
        let _ = writeln!(out, "{:<28} {}", "masked WMD", fmt_opt(s.masked_wmd));
        let _ = writeln!(out, "{:<28} {:.2}", "BLEU", s.bleu);
        let _ = writeln!(out, "{:<28} {}", "skipped (empty after mask)", s.skipped_empty_after_mask);
        let _ = writeln!(out, "{:<28} {NOT_COMPUTED}", "naturalness (N-A/N-C/N-D)");
        let _ = writeln!(out, "{:<28} {NOT_COMPUTED}", "BERTSCORE");
        let _ = writeln!(out);
        let _ = writeln!(out, "{:>5} {:>6} {:>4} {:>7} {:>7} {:>8}  source => output", "idx", "target", "hit", "p_in", "p_out", "wmd");
        for r in &self.sentences {
            let _ = writeln!(
                out,
                "{:>5} {:>6} {:>4} {:>7.4} {:>7.4} {:>8}  {} => {}",
                r.index,
                r.target,
                if r.hit { "yes" } else { "no" },
                r.p_target_in,
                r.p_target_out,
                fmt_opt(r.masked_wmd),
                r.source,
                r.output
            );
        }
        let _ = writeln!(out, "{JSONL_MARKER}");
        let _ = writeln!(out, "{}", serde_json::to_string(&self.summary)?);
        for r in &self.sentences {
            let _ = writeln!(out, "{}", serde_json::to_string(r)?);
        }
        Ok(out)
    }

    /// Reads back the structured section of [`MetricReport::to_text`].
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().skip_while(|(_, l)| *l != JSONL_MARKER).skip(1);
        let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line: line + 1, msg };
        let (n, first) = lines.next().ok_or_else(|| err(0, format!("no {JSONL_MARKER} section")))?;
        let summary: MetricSummary = serde_json::from_str(first).map_err(|e| err(n, e.to_string()))?;
        let mut sentences = Vec::with_capacity(summary.sentences);
        for (n, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            sentences.push(serde_json::from_str(line).map_err(|e| err(n, e.to_string()))?);
        }
        if sentences.len() != summary.sentences {
            return Err(err(0, format!("summary counts {} sentences, found {}", summary.sentences, sentences.len())));
        }
        Ok(MetricReport { summary, sentences })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, path)
    }
}
