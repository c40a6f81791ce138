//! Trains the desk-scale model on the synthetic corpus and saves a
//! checkpoint for the `style_transfer` example.
//!
//! cargo run --release --example train_toy [-- SEED]

use std::time::Instant;

use gtae::graph::{attach_parses, prepare_dataset, PrepareOptions};
use gtae::synth::SyntheticCorpus;
use gtae::trainer::{fit, reconstruction_accuracy, save_checkpoint, EpochLog, ModelState, Phase, RunConfig, TrainObserver};

struct Progress(Instant);

impl TrainObserver for Progress {
    fn epoch_end(&mut self, state: &ModelState, phase: Phase, log: &EpochLog) -> gtae::Result<()> {
        println!(
            "{:>4.0}s epoch {:>2} {:<8} rec {:.4}  clf g/s {:.3}/{:.3}  transfer g/s {:.3}/{:.3}",
            self.0.elapsed().as_secs_f64(),
            state.epoch(),
            format!("{phase:?}"),
            log.l_rec,
            log.lc_g,
            log.lc_s,
            log.lt_g,
            log.lt_s
        );
        Ok(())
    }
}

fn main() -> gtae::Result<()> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().expect("seed")).unwrap_or(0);
    let corpus = SyntheticCorpus::generate(500, 1);
    let parses = attach_parses(&corpus.records, None)?;
    let (data, _) = prepare_dataset(&corpus.records, &parses, &PrepareOptions::default())?;

    let mut config = RunConfig::toy();
    config.train.seed = seed;
    let mut state = ModelState::new(&config.model, &config.train, data.vocab.len(), data.vocab.hash())?;
    println!("{} parameters", state.store.count(None));
    fit(&mut state, &data, &config.train, &mut Progress(Instant::now()))?;

    let acc = reconstruction_accuracy(&state, &data.dev, config.train.decode_max_len)?;
    println!("dev reconstruction token accuracy {acc:.3}; best validation {:?}", state.best);

    let dir = std::env::temp_dir().join("gtae-toy");
    data.save(dir.join("data"))?;
    save_checkpoint(&state, &config.train, dir.join("model.ckpt"))?;
    println!("saved {}", dir.join("model.ckpt").display());
    Ok(())
}
