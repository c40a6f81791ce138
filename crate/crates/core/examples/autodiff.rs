//! Compares one tape gradient against central differences, then fits a
//! small network to XOR with Adam.

use gtae::autodiff::nn::rng_from;
use gtae::autodiff::{Adam, FeedForward, Linear, ParamGroup, ParamStore, Tape, Tensor};

fn main() -> gtae::Result<()> {
    let mut rng = rng_from(0);
    let mut store = ParamStore::new();
    let hidden = Linear::new(&mut store, &mut rng, "hidden", ParamGroup::Generator, 2, 8);
    let mix = FeedForward::new(&mut store, &mut rng, "mix", ParamGroup::Generator, 8);
    let out = Linear::new(&mut store, &mut rng, "out", ParamGroup::Generator, 8, 2);
    let ids: Vec<_> = store.ids().collect();

    let inputs = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]])?;
    let labels = [0, 1, 1, 0];
    let loss_of = |store: &ParamStore| -> gtae::Result<(f64, gtae::autodiff::ParamGrads)> {
        let mut tape = Tape::with_params(store);
        let x = tape.constant(inputs.clone());
        let h = hidden.forward(&mut tape, x)?;
        let h = tape.tanh(h)?;
        let h = mix.forward(&mut tape, h)?;
        let logits = out.forward(&mut tape, h)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        Ok((tape.value(loss).item(), tape.backward(loss)?.into_params()))
    };

    let (_, grads) = loss_of(&store)?;
    let id = ids[0];
    let analytic = grads.get_or_zero(&store, id).data()[0];
    let h = 1e-5;
    let mut probe = store.clone();
    let x = probe.value(id).data()[0];
    probe.value_mut(id).data_mut()[0] = x + h;
    let up = loss_of(&probe)?.0;
    probe.value_mut(id).data_mut()[0] = x - h;
    let down = loss_of(&probe)?.0;
    println!("d loss / d {}[0]: tape {analytic:.8e}  finite difference {:.8e}", store.get(id).name, (up - down) / (2.0 * h));

    let mut adam = Adam::new(0.05);
    for step in 0..=200 {
        let (loss, grads) = loss_of(&store)?;
        if step % 50 == 0 {
            println!("step {step:>3}  loss {loss:.5}");
        }
        adam.step(&mut store, &grads, &ids)?;
    }
    Ok(())
}
