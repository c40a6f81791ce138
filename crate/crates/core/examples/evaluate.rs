//! Scores a handful of transfers with every automatic metric: ACCU and EMD
//! from the held-fixed classifier, masked WMD, and self-BLEU.

use gtae::graph::{attach_parses, prepare_dataset, PrepareOptions};
use gtae::metrics::{corpus_bleu, evaluate_run, masked_wmd, EvalArtifacts, EvalClassifierConfig, Transfer};
use gtae::synth::{style_words, SyntheticCorpus};

fn main() -> gtae::Result<()> {
    let corpus = SyntheticCorpus::generate(300, 2);
    let parses = attach_parses(&corpus.records, None)?;
    let (data, _) = prepare_dataset(&corpus.records, &parses, &PrepareOptions::default())?;
    let artifacts = EvalArtifacts::prepare(&data, EvalClassifierConfig::default())?;
    println!("lexicon: {:?}", artifacts.lexicon.words().collect::<Vec<_>>());

    let toks = |s: &str| -> Vec<String> { s.split_whitespace().map(String::from).collect() };
    let (a, b, c) = (&data.test[0], &data.test[1], &data.test[2]);
    // swap each style word for the first word of the target style
    let swapped: Vec<String> = a
        .tokens
        .iter()
        .map(|w| if artifacts.lexicon.contains(w) { style_words(a.style.flipped())[0].to_string() } else { w.clone() })
        .collect();
    let transfers = vec![
        Transfer { source: a.tokens.clone(), output: swapped, target: a.style.flipped() },
        Transfer { source: b.tokens.clone(), output: b.tokens.clone(), target: b.style.flipped() },
        Transfer { source: c.tokens.clone(), output: toks("the cat sat"), target: c.style.flipped() },
    ];

    for t in &transfers {
        let wmd = masked_wmd(&t.source, &t.output, &artifacts.lexicon, &artifacts.embeddings)?;
        let bleu = corpus_bleu(&[t.output.clone()], &[t.source.clone()])?;
        println!("{:<40} -> {:<40} wmd {:>8} bleu {bleu:6.2}", t.source.join(" "), t.output.join(" "), wmd.map_or("n/a".into(), |w| format!("{w:.4}")));
    }

    let report = evaluate_run(&transfers, &artifacts)?;
    let text = report.to_text()?;
    println!("\n{}", text.split(gtae::metrics::JSONL_MARKER).next().unwrap_or(""));
    Ok(())
}
