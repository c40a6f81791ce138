//! Trains several ablation variants on the synthetic corpus and prints
//! one row per variant.
//!
//! cargo run --release --example ablation [-- VARIANT...]

use gtae::cli::{run_variant, AblationRow, Variant};
use gtae::graph::{attach_parses, prepare_dataset, PrepareOptions};
use gtae::metrics::{EvalArtifacts, EvalClassifierConfig};
use gtae::synth::SyntheticCorpus;
use gtae::trainer::RunConfig;

fn main() -> gtae::Result<()> {
    let mut variants: Vec<Variant> = std::env::args().skip(1).map(|a| a.parse()).collect::<gtae::Result<_>>()?;
    if variants.is_empty() {
        variants = vec![Variant::Full, Variant::SgtIdentity, Variant::TransferGraphOnly, Variant::Pretrain(0)];
    }
    let corpus = SyntheticCorpus::generate(500, 1);
    let parses = attach_parses(&corpus.records, None)?;
    let (data, _) = prepare_dataset(&corpus.records, &parses, &PrepareOptions::default())?;
    let artifacts = EvalArtifacts::prepare(&data, EvalClassifierConfig::default())?;

    println!("{}", AblationRow::HEADER);
    for v in variants {
        let (_, row) = run_variant(&data, &RunConfig::toy(), v, &artifacts)?;
        println!("{}", row.to_tsv());
    }
    Ok(())
}
