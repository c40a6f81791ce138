//! Automatic evaluation: transfer accuracy, style-posterior EMD,
//! lexicon-masked word mover's distance and BLEU.

mod bleu;
mod classifier;
mod embeddings;
mod lexicon;
mod report;
mod transport;

pub use bleu::{corpus_bleu, BleuStats, MAX_ORDER, SMOOTHING_NOTE};
pub use classifier::{
    accuracy, labelled_ids, per_sentence_emd, train_eval_classifier, transfer_emd, EvalClassifier, EvalClassifierConfig,
    StyleScorer,
};
pub use embeddings::{train_embeddings, WordEmbeddings, COOCCURRENCE_WINDOW, EMBEDDING_DIM};
pub use lexicon::{build_style_lexicon, fit_bag_of_words, select_lexicon, StyleLexicon, LEXICON_CAP, LEXICON_FRACTION};
pub use report::{
    dataset_hash, evaluate_run, evaluate_with, EvalArtifacts, MetricReport, MetricSummary, SentenceMetrics, Transfer,
    JSONL_MARKER, NOT_COMPUTED,
};
pub use transport::{masked_wmd, optimal_transport};
