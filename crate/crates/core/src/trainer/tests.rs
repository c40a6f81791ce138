use super::*;
use crate::autodiff::ZeroNoise;
use crate::graph::{attach_parses, prepare_dataset, PrepareOptions};
use crate::synth::SyntheticCorpus;

fn tiny_dataset() -> Dataset {
    let corpus = SyntheticCorpus::generate(24, 5);
    let parses = attach_parses(&corpus.records, None).unwrap();
    let options = PrepareOptions { min_count: 1, split: (0.75, 0.125), ..Default::default() };
    prepare_dataset(&corpus.records, &parses, &options).unwrap().0
}

fn tiny_model() -> ModelConfig {
    ModelConfig { d_model: 8, heads: 2, layers: 1, classifier_maps: 2, ..ModelConfig::toy() }
}

fn tiny_train() -> TrainConfig {
    TrainConfig { warmup_epochs: 1, train_epochs: 1, batch_size: 8, patience: 0, decode_max_len: 6, seed: 11, ..TrainConfig::toy() }
}

fn fresh(data: &Dataset, train: &TrainConfig) -> ModelState {
    ModelState::new(&tiny_model(), train, data.vocab.len(), data.vocab.hash()).unwrap()
}

fn same_params(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((_, p), (_, q))| {
            p.name == q.name && p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

fn touched_groups(store: &ParamStore, grads: &ParamGrads) -> Vec<ParamGroup> {
    let mut groups: Vec<ParamGroup> = Vec::new();
    for (id, g) in grads.iter() {
        let group = store.get(id).group;
        if g.data().iter().any(|x| *x != 0.0) && !groups.contains(&group) {
            groups.push(group);
        }
    }
    groups
}

#[test]
fn temperature_anneals_to_floor() {
    let c = TrainConfig::toy();
    assert_eq!(c.temperature(0), 1.0);
    assert_eq!(c.temperature(2), 0.25);
    assert_eq!(c.temperature(10), c.temperature_floor);
}

#[test]
fn fixed_seed_runs_are_bit_identical() {
    let data = tiny_dataset();
    let train = tiny_train();
    let (mut a, mut b) = (fresh(&data, &train), fresh(&data, &train));
    let log_a = fit(&mut a, &data, &train, &mut ()).unwrap();
    let log_b = fit(&mut b, &data, &train, &mut ()).unwrap();
    let bits = |l: &[EpochLog]| -> Vec<u64> {
        l.iter().flat_map(|e| [e.l_rec, e.lc_g, e.lc_s, e.lt_g, e.lt_s]).map(f64::to_bits).collect()
    };
    assert_eq!(bits(&log_a), bits(&log_b));
    assert!(same_params(&a.store, &b.store));
    let other = TrainConfig { seed: 12, ..train.clone() };
    let mut c = fresh(&data, &other);
    fit(&mut c, &data, &other, &mut ()).unwrap();
    assert!(!same_params(&a.store, &c.store));
}

#[test]
fn phases_only_move_their_own_parameters() {
    let data = tiny_dataset();
    let train = tiny_train();
    let state = fresh(&data, &train);
    let ex = &data.train[0];
    let (g, _) = reconstruction_step(&state.model, &state.store, ex).unwrap();
    assert_eq!(touched_groups(&state.store, &g), [ParamGroup::Generator]);
    let (g, _) = transfer_step(&state.model, &state.store, ex, &train, 1.0, &mut ZeroNoise).unwrap();
    assert_eq!(touched_groups(&state.store, &g), [ParamGroup::Generator]);
    let (g, _) = classifier_step(&state.model, &state.store, ex, &train).unwrap();
    let mut groups = touched_groups(&state.store, &g);
    groups.sort_by_key(|g| *g as u8);
    assert_eq!(groups, [ParamGroup::GraphClassifier, ParamGroup::SentenceClassifier]);
}

#[test]
fn transfer_objective_is_the_weighted_sum() {
    let data = tiny_dataset();
    let train = tiny_train();
    let state = fresh(&data, &train);
    let ex = &data.train[1];
    let mut tape = generator_tape(&state.store);
    let (loss, b) = transfer_objective(&state.model, &mut tape, ex, &train, 0.5, &mut ZeroNoise).unwrap();
    let expected = b.rec + train.lambda_g * b.lt_g + train.lambda_s * b.lt_s;
    assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    assert!(b.lt_g > 0.0 && b.lt_s > 0.0);

    let zero = TrainConfig { lambda_g: 0.0, lambda_s: 0.0, ..train.clone() };
    let mut tape = generator_tape(&state.store);
    let (loss, b) = transfer_objective(&state.model, &mut tape, ex, &zero, 0.5, &mut ZeroNoise).unwrap();
    let mut rec_tape = generator_tape(&state.store);
    let emb = rec_tape.param(state.model.embedding);
    let rec = state.model.reconstruction_nll(&mut rec_tape, emb, &ex.graph, ex.style).unwrap();
    assert_eq!(tape.value(loss).item(), rec_tape.value(rec).item());
    assert_eq!(b.rec, rec_tape.value(rec).item());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = tiny_dataset();
    let train = tiny_train();
    let mut state = fresh(&data, &train);
    fit(&mut state, &data, &TrainConfig { train_epochs: 0, ..train.clone() }, &mut ()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&state, &train, &path).unwrap();
    let (back, back_train) = load_checkpoint(&path, Some(&data.vocab.hash())).unwrap();
    assert_eq!(back_train, train);
    assert!(same_params(&back.store, &state.store));
    assert_eq!(back.optimizer, state.optimizer);
    assert_eq!((back.warmup_done, back.train_done), (state.warmup_done, state.train_done));
    assert!(!dir.path().join("model.tmp").exists());

    let err = load_checkpoint(&path, Some("not-the-hash")).unwrap_err();
    assert!(err.to_string().contains("vocabulary hash mismatch"), "{err}");

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(load_checkpoint(&path, None), Err(Error::Checkpoint(_))));
    std::fs::write(&path, b"garbage").unwrap();
    assert!(matches!(load_checkpoint(&path, None), Err(Error::Checkpoint(_))));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let data = tiny_dataset();
    let train = TrainConfig { warmup_epochs: 2, train_epochs: 0, ..tiny_train() };
    let mut straight = fresh(&data, &train);
    fit(&mut straight, &data, &train, &mut ()).unwrap();

    let mut first = fresh(&data, &train);
    fit(&mut first, &data, &TrainConfig { warmup_epochs: 1, ..train.clone() }, &mut ()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&first, &train, &path).unwrap();
    let (mut resumed, _) = load_checkpoint(&path, None).unwrap();
    assert_eq!(resumed.epoch(), 1);
    fit(&mut resumed, &data, &train, &mut ()).unwrap();
    assert_eq!(resumed.epoch(), 2);
    assert!(same_params(&resumed.store, &straight.store));
}

#[test]
fn disabled_classifier_phase_is_a_no_op() {
    let data = tiny_dataset();
    let train = TrainConfig { classifier_g: false, classifier_s: false, ..tiny_train() };
    let mut state = fresh(&data, &train);
    let before = state.store.clone();
    let ids = state.model.classifier_ids(&state.store);
    warmup_epoch(&mut state, &data.train, &train).unwrap();
    for id in ids {
        assert_eq!(state.store.value(id), before.value(id));
    }
}
