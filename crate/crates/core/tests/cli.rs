use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gtae::cli::{RunManifest, TrainLogLine, LOCK_FILE};
use gtae::graph::Dataset;
use gtae::metrics::MetricReport;

const TINY: [&str; 14] = [
    "--set", "d_model=16",
    "--set", "heads=2",
    "--set", "layers=1",
    "--set", "classifier_maps=4",
    "--set", "warmup_epochs=1",
    "--set", "train_epochs=1",
    "--set", "decode_max_len=10",
];

fn gtae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtae")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gtae(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_and_prepare(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let raw = root.join("raw");
    let data = root.join("data");
    ok(&["synth", "--per-style", "40", "--seed", "3", "--out", s(&raw)]);
    let corpus = raw.join("corpus.jsonl");
    ok(&["prepare", "--corpus", s(&corpus), "--min-count", "1", "--train-frac", "0.7", "--dev-frac", "0.1", "--out", s(&data)]);
    (raw, data)
}

#[test]
fn pipeline_from_synth_to_eval() {
    let root = tempfile::tempdir().unwrap();
    let (raw, data) = synth_and_prepare(root.path());
    assert!(data.join(Dataset::VOCAB_FILE).exists());
    assert!(data.join("prepare_report.json").exists());

    let run = root.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run), "--seed", "4"];
    args.extend(TINY);
    ok(&args);
    for f in ["best.ckpt", "last.ckpt", "config.txt", "train_log.jsonl", "manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log: Vec<TrainLogLine> =
        fs::read_to_string(run.join("train_log.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(log.iter().map(|l| l.epoch).collect::<Vec<_>>(), [1, 2]);
    let manifest = RunManifest::load(&run).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.status, "ok");
    assert_eq!(manifest.seed, Some(4));
    assert_eq!(manifest.inputs.len(), 1);
    assert_eq!(manifest.inputs[0].sha256.len(), 64);
    assert!(!run.join(LOCK_FILE).exists());

    let ckpt = run.join("best.ckpt");
    let moved = root.path().join("transfer");
    ok(&["transfer", "--checkpoint", s(&ckpt), "--data", s(&data), "--input", s(&raw.join("corpus.jsonl")), "--out", s(&moved)]);
    assert_eq!(fs::read_to_string(moved.join("outputs.txt")).unwrap().lines().count(), 80);

    let eval = root.path().join("eval");
    let out = ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&eval)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ACCU"));
    let report = MetricReport::load(eval.join("report.txt")).unwrap();
    let test_len = Dataset::load(&data).unwrap().test.len();
    assert_eq!(report.sentences.len(), test_len);
    assert!((0.0..=1.0).contains(&report.summary.accu));
    assert!(eval.join("artifacts").join("eval_classifier.json").exists());

    // resume continues the epoch count
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run), "--seed", "4", "--resume"];
    let last = run.join("last.ckpt");
    args.push(s(&last));
    args.extend(TINY);
    args.extend(["--set", "train_epochs=2"]);
    ok(&args);
    let epochs: Vec<usize> = fs::read_to_string(run.join("train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<TrainLogLine>(l).unwrap().epoch)
        .collect();
    assert_eq!(epochs, [1, 2, 3]);
}

#[test]
fn identity_outputs_score_perfect_content_metrics() {
    let root = tempfile::tempdir().unwrap();
    let (_, data) = synth_and_prepare(root.path());
    let dataset = Dataset::load(&data).unwrap();
    let lines: String = dataset.test.iter().map(|e| dataset.vocab.decode(&e.graph.ids).join(" ") + "\n").collect();
    let outputs = root.path().join("identity.txt");
    fs::write(&outputs, lines).unwrap();
    let eval = root.path().join("eval");
    ok(&["eval", "--data", s(&data), "--outputs", s(&outputs), "--out", s(&eval)]);
    let report = MetricReport::load(eval.join("report.txt")).unwrap();
    assert!((report.summary.bleu - 100.0).abs() < 1e-9);
    assert_eq!(report.summary.masked_wmd, Some(0.0));
    assert_eq!(report.summary.emd, 0.0);

    let text = fs::read_to_string(eval.join("report.txt")).unwrap();
    let back = MetricReport::parse(&text, &eval.join("report.txt")).unwrap();
    assert_eq!(back, report);

    // a line count that does not match the split is a data error
    fs::write(&outputs, "just one line\n").unwrap();
    let out = gtae(&["eval", "--data", s(&data), "--outputs", s(&outputs), "--out", s(&root.path().join("bad"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_and_lock() {
    assert_eq!(gtae(&["--help"]).status.code(), Some(0));
    assert_eq!(gtae(&["train"]).status.code(), Some(1));
    assert_eq!(gtae(&["frobnicate"]).status.code(), Some(1));

    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("o");
    let missing = root.path().join("nope.jsonl");
    assert_eq!(gtae(&["prepare", "--corpus", s(&missing), "--out", s(&out)]).status.code(), Some(2));
    let garbage = root.path().join("garbage.jsonl");
    fs::write(&garbage, "{not json\n").unwrap();
    assert_eq!(gtae(&["prepare", "--corpus", s(&garbage), "--out", s(&out)]).status.code(), Some(2));
    let manifest = RunManifest::load(&out).unwrap();
    assert!(manifest.status.starts_with("failed"), "{}", manifest.status);

    assert_eq!(gtae(&["synth", "--out", s(&out), "--set", "no_such_key=1"]).status.code(), Some(1));

    fs::write(out.join(LOCK_FILE), "").unwrap();
    let locked = gtae(&["synth", "--per-style", "2", "--out", s(&out)]);
    assert_eq!(locked.status.code(), Some(2));
    assert!(!out.join("corpus.jsonl").exists());
}

#[test]
fn synth_is_reproducible_from_the_seed() {
    let root = tempfile::tempdir().unwrap();
    let (a, b, c) = (root.path().join("a"), root.path().join("b"), root.path().join("c"));
    ok(&["synth", "--per-style", "10", "--seed", "8", "--out", s(&a)]);
    ok(&["synth", "--per-style", "10", "--seed", "8", "--out", s(&b)]);
    ok(&["synth", "--per-style", "10", "--seed", "9", "--out", s(&c)]);
    let read = |d: &Path| fs::read(d.join("corpus.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}
