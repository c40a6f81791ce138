//! Generates the two-style synthetic corpus, prepares a dataset from it
//! and recovers the planted style words with the bag-of-words lexicon.

use gtae::graph::{attach_parses, prepare_dataset, PrepareOptions};
use gtae::metrics::{build_style_lexicon, LEXICON_FRACTION};
use gtae::synth::SyntheticCorpus;

fn main() -> gtae::Result<()> {
    let corpus = SyntheticCorpus::generate(200, 1);
    for r in corpus.records.iter().take(4) {
        println!("[{}] {}", r.style.index(), r.tokens.join(" "));
    }

    let parses = attach_parses(&corpus.records, None)?;
    let (data, report) = prepare_dataset(&corpus.records, &parses, &PrepareOptions::default())?;
    println!(
        "\nkept {} of {} sentences; vocabulary {}; splits {}/{}/{}",
        report.kept,
        report.input,
        data.vocab.len(),
        data.train.len(),
        data.dev.len(),
        data.test.len()
    );

    let lexicon = build_style_lexicon(corpus.records.iter().map(|r| (r.tokens.as_slice(), r.style)), LEXICON_FRACTION)?;
    let planted = corpus.lexicon.words();
    println!("\nlexicon ({} words):", lexicon.len());
    for w in lexicon.words() {
        println!("  {w:<10} weight {:+.3}  planted {}", lexicon.weight(w).unwrap_or(0.0), planted.contains(w));
    }

    let dir = std::env::temp_dir().join("gtae-synthetic");
    corpus.write(&dir)?;
    data.save(dir.join("data"))?;
    println!("\nwrote corpus and dataset under {}", dir.display());
    Ok(())
}
