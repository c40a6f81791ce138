//! Rewrites sentences to the opposite style with a trained checkpoint.
//!
//! cargo run --release --example train_toy
//! cargo run --release --example style_transfer

use gtae::graph::{build_adjacency, Dataset, EdgeFlags, LinguisticGraph, Style};
use gtae::trainer::load_checkpoint;

fn main() -> gtae::Result<()> {
    let dir = std::env::temp_dir().join("gtae-toy");
    let data = Dataset::load(dir.join("data")).map_err(|e| {
        eprintln!("run the train_toy example first");
        e
    })?;
    let (state, train) = load_checkpoint(dir.join("model.ckpt"), Some(&data.vocab.hash()))?;

    // hand-written sentences in the corpus vocabulary, with their heads
    // (1-based, 0 = root)
    let inputs: [(&str, &[usize], Style); 3] = [
        ("this teacher is really horrible .", &[2, 5, 5, 5, 0, 5], Style::ZERO),
        ("a wonderful camera today .", &[3, 3, 0, 3, 3], Style::ONE),
        ("my driver was bad and the window opened .", &[2, 4, 4, 0, 8, 7, 8, 4, 4], Style::ZERO),
    ];
    for (text, heads, style) in inputs {
        let tokens: Vec<&str> = text.split(' ').collect();
        let graph = LinguisticGraph { ids: data.vocab.encode(&tokens), heads: heads.to_vec(), adjacency: build_adjacency(heads, EdgeFlags::default()) };
        let out = state.model.transfer(&state.store, &graph, style.flipped(), train.decode_max_len)?;
        println!("[{} -> {}] {text}\n         {}", style.index(), style.flipped().index(), data.vocab.decode(&out).join(" "));
    }

    println!("\nheld-out sentences:");
    for ex in data.test.iter().take(6) {
        let out = state.model.transfer(&state.store, &ex.graph, ex.style.flipped(), train.decode_max_len)?;
        println!("  {}  =>  {}", data.vocab.decode(&ex.graph.ids).join(" "), data.vocab.decode(&out).join(" "));
    }
    Ok(())
}
