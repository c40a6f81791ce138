//! Linguistic graph construction: dependency parses in, token-id graphs
//! with binary adjacency out.

mod adjacency;
mod conllu;
mod corpus;
mod prepare;
mod vocab;

pub use adjacency::{augment_with_style_node, build_adjacency, Adjacency, EdgeFlags};
pub use conllu::{load_conllu, parse_conllu, validate_heads, write_conllu_block, ParsedSentence};
pub use corpus::{
    by_style, filter_and_encode, load_examples, read_corpus, read_jsonl, save_examples, write_jsonl, CorpusRecord,
    Dataset, Example, LinguisticGraph, Rejection, Style, StyledCorpus, DEFAULT_MAX_LEN,
};
pub use prepare::{attach_parses, prepare_dataset, PrepareOptions, PrepareReport};
pub use vocab::{build_vocab, Vocab, BOS, DEFAULT_MIN_COUNT, EOS, PAD, SPECIALS, UNK};
