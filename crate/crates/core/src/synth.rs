//! Templated two-style corpus with a planted sentiment lexicon.
//!
//! Every sentence carries exactly one style word. Sentences come in pairs
//! that share all content words and differ only in that word, so content
//! statistics are identical across the two styles. The vocabulary holds 80
//! ordinary words of which the 8 style words are exactly 10%.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::derive_rng;
use crate::error::Result;
use crate::graph::{write_conllu_block, write_jsonl, CorpusRecord, ParsedSentence, Style};

/// Style 0 words, index-aligned with [`POSITIVE`].
pub const NEGATIVE: [&str; 4] = ["bad", "awful", "terrible", "horrible"];
/// Style 1 words.
pub const POSITIVE: [&str; 4] = ["good", "great", "excellent", "wonderful"];

const NOUNS: [&str; 40] = [
    "movie", "food", "staff", "room", "service", "pizza", "book", "car", "show", "hotel", "shop", "coffee", "menu",
    "price", "park", "team", "meal", "song", "phone", "bike", "garden", "city", "bar", "class", "game", "house",
    "train", "beach", "soup", "salad", "story", "camera", "laptop", "museum", "concert", "bakery", "driver", "teacher",
    "doctor", "window",
];

const VERBS: [&str; 19] = [
    "saw", "found", "served", "ordered", "visited", "cooked", "watched", "brought", "made", "offered", "showed",
    "shared", "packed", "painted", "fixed", "built", "sold", "cleaned", "opened",
];

#[derive(Clone, Copy)]
enum Slot {
    Word(&'static str),
    Style,
    Noun,
    Verb,
}

use Slot::{Noun, Style as Adj, Verb, Word};

/// Template slots with 1-based heads (0 = root).
const TEMPLATES: [&[(Slot, usize)]; 6] = [
    // the ADJ N V the N .
    &[(Word("the"), 3), (Adj, 3), (Noun, 4), (Verb, 0), (Word("the"), 6), (Noun, 4), (Word("."), 4)],
    // this N is really ADJ .
    &[(Word("this"), 2), (Noun, 5), (Word("is"), 5), (Word("really"), 5), (Adj, 0), (Word("."), 5)],
    // we V the ADJ N at the N .
    &[
        (Word("we"), 2),
        (Verb, 0),
        (Word("the"), 5),
        (Adj, 5),
        (Noun, 2),
        (Word("at"), 8),
        (Word("the"), 8),
        (Noun, 2),
        (Word("."), 2),
    ],
    // my N was ADJ and the N V .
    &[
        (Word("my"), 2),
        (Noun, 4),
        (Word("was"), 4),
        (Adj, 0),
        (Word("and"), 8),
        (Word("the"), 7),
        (Noun, 8),
        (Verb, 4),
        (Word("."), 4),
    ],
    // the N V a very ADJ N
    &[(Word("the"), 2), (Noun, 3), (Verb, 0), (Word("a"), 7), (Word("very"), 6), (Adj, 7), (Noun, 3)],
    // a ADJ N today .
    &[(Word("a"), 3), (Adj, 3), (Noun, 0), (Word("today"), 3), (Word("."), 3)],
];

/// The planted style words of one label.
pub fn style_words(style: Style) -> &'static [&'static str; 4] {
    if style == Style::ONE {
        &POSITIVE
    } else {
        &NEGATIVE
    }
}

/// Ground-truth style lexicon, as written to `lexicon.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedLexicon {
    pub negative: Vec<String>,
    pub positive: Vec<String>,
}

impl PlantedLexicon {
    pub fn words(&self) -> BTreeSet<String> {
        self.negative.iter().chain(&self.positive).cloned().collect()
    }
}

impl Default for PlantedLexicon {
    fn default() -> Self {
        PlantedLexicon {
            negative: NEGATIVE.iter().map(|s| s.to_string()).collect(),
            positive: POSITIVE.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub records: Vec<CorpusRecord>,
    pub lexicon: PlantedLexicon,
}

impl SyntheticCorpus {
    /// `per_style` sentences of each label, ordered as alternating pairs.
    pub fn generate(per_style: usize, seed: u64) -> Self {
        let mut rng = derive_rng(seed, &[0x5e17]);
        let mut records = Vec::with_capacity(2 * per_style);
        for i in 0..per_style {
            let template = TEMPLATES[i % TEMPLATES.len()];
            let pick = rng.random_range(0..POSITIVE.len());
            let fills: Vec<&str> = template
                .iter()
                .map(|(slot, _)| match slot {
                    Word(w) => *w,
                    Noun => NOUNS.choose(&mut rng).copied().expect("nouns"),
                    Verb => VERBS.choose(&mut rng).copied().expect("verbs"),
                    Adj => "",
                })
                .collect();
            let heads: Vec<usize> = template.iter().map(|&(_, h)| h).collect();
            for style in Style::ALL {
                let tokens = fills
                    .iter()
                    .zip(template.iter())
                    .map(|(w, (slot, _))| match slot {
                        Adj => style_words(style)[pick].to_string(),
                        _ => w.to_string(),
                    })
                    .collect();
                records.push(CorpusRecord { tokens, style, heads: Some(heads.clone()) });
            }
        }
        SyntheticCorpus { records, lexicon: PlantedLexicon::default() }
    }

    /// Parses in CoNLL-U form, aligned with `records`.
    pub fn parses(&self) -> Vec<ParsedSentence> {
        self.records
            .iter()
            .map(|r| ParsedSentence { tokens: r.tokens.clone(), heads: r.heads.clone().unwrap_or_default() })
            .collect()
    }

    /// Writes `corpus.jsonl`, `corpus.conllu` and `lexicon.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_jsonl(dir.join("corpus.jsonl"), &self.records)?;
        let conllu: String = self.parses().iter().map(write_conllu_block).collect();
        fs::write(dir.join("corpus.conllu"), conllu)?;
        fs::write(dir.join("lexicon.json"), serde_json::to_string_pretty(&self.lexicon)?)?;
        Ok(())
    }
}

/// Every ordinary word the generator can emit.
pub fn vocabulary() -> BTreeSet<&'static str> {
    let mut words: BTreeSet<&str> = NOUNS.iter().chain(&VERBS).chain(&POSITIVE).chain(&NEGATIVE).copied().collect();
    for t in TEMPLATES {
        for (slot, _) in t.iter() {
            if let Word(w) = slot {
                words.insert(w);
            }
        }
    }
    words
}
