//! Command-line front end: argument types, run bookkeeping and the six
//! pipeline commands.
//!
//! Every command writes only under its `--out` directory, holds a lock file
//! there while it runs and leaves exactly one `manifest.json` describing
//! the run.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{
    attach_parses, filter_and_encode, load_conllu, prepare_dataset, read_corpus, Dataset, EdgeFlags, Example,
    PrepareOptions, PrepareReport, Rejection, Style, Vocab, DEFAULT_MAX_LEN, DEFAULT_MIN_COUNT,
};
use crate::metrics::{evaluate_run, EvalArtifacts, EvalClassifierConfig, MetricReport, Transfer};
use crate::synth::SyntheticCorpus;
use crate::trainer::{
    apply_setting, fit, load_checkpoint, save_checkpoint, EpochLog, ModelState, Phase, RunConfig, TrainObserver,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".gtae.lock";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const REPORT_FILE: &str = "report.txt";
pub const OUTPUTS_FILE: &str = "outputs.txt";
pub const ABLATION_FILE: &str = "ablation.tsv";

#[derive(Parser, Debug)]
#[command(name = "gtae", version, about = "Graph-transformer auto-encoder for text style transfer")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// `key = value` configuration file; `scale = toy|full` picks the base.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides the training seed, the split seed and the generator seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory that receives every output of the command.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for per-sentence parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Extra setting applied after the config file; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub settings: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode labelled corpora into a dataset directory.
    Prepare(PrepareArgs),
    /// Generate the two-style synthetic corpus with parses.
    Synth(SynthArgs),
    /// Warm up and train a model.
    Train(TrainArgs),
    /// Transfer sentences with a trained model.
    Transfer(TransferArgs),
    /// Score transfers and write a metric report.
    Eval(EvalArgs),
    /// Train and evaluate one ablation variant.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Corpus files, one JSON record per line.
    #[arg(long, required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    /// CoNLL-U parses aligned with the corpus files, in the same order.
    #[arg(long, num_args = 1..)]
    pub conllu: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    pub min_count: usize,
    #[arg(long, default_value_t = 0.9)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.05)]
    pub dev_frac: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub per_style: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    /// The opposite of each record's own label.
    Flip,
    #[value(name = "0")]
    Zero,
    #[value(name = "1")]
    One,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset whose vocabulary the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Sentences to transfer, one corpus record per line.
    #[arg(long)]
    pub input: PathBuf,
    /// CoNLL-U parses for records without `heads`.
    #[arg(long)]
    pub conllu: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TargetArg::Flip)]
    pub target: TargetArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Dev,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model whose style-flipped transfers are scored.
    #[arg(long, conflicts_with = "outputs", required_unless_present = "outputs")]
    pub checkpoint: Option<PathBuf>,
    /// Transfer outputs, one line per sentence of the split.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Cache for the evaluation classifier, lexicon and embeddings
    /// (default: `<out>/artifacts`).
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// full, sgt-i, cgt-i, sgt-cgt-i, c-clas-g-only, c-clas-s-only,
    /// t-clas-g-only, t-clas-s-only or pretrain-N.
    #[arg(long)]
    pub variant: Variant,
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
}

/// A model or loss modification compared against the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    SgtIdentity,
    CgtIdentity,
    BothIdentity,
    ClassifierGraphOnly,
    ClassifierSentenceOnly,
    TransferGraphOnly,
    TransferSentenceOnly,
    /// Warm-up epochs overridden.
    Pretrain(usize),
}

impl Variant {
    pub fn apply(self, config: &mut RunConfig) {
        let (m, t) = (&mut config.model, &mut config.train);
        match self {
            Variant::Full => {}
            Variant::SgtIdentity => m.sgt_identity = true,
            Variant::CgtIdentity => m.cgt_identity = true,
            Variant::BothIdentity => (m.sgt_identity, m.cgt_identity) = (true, true),
            Variant::ClassifierGraphOnly => t.classifier_s = false,
            Variant::ClassifierSentenceOnly => t.classifier_g = false,
            Variant::TransferGraphOnly => t.transfer_s = false,
            Variant::TransferSentenceOnly => t.transfer_g = false,
            Variant::Pretrain(n) => t.warmup_epochs = n,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Variant::Full,
            "sgt-i" => Variant::SgtIdentity,
            "cgt-i" => Variant::CgtIdentity,
            "sgt-cgt-i" => Variant::BothIdentity,
            "c-clas-g-only" => Variant::ClassifierGraphOnly,
            "c-clas-s-only" => Variant::ClassifierSentenceOnly,
            "t-clas-g-only" => Variant::TransferGraphOnly,
            "t-clas-s-only" => Variant::TransferSentenceOnly,
            other => match other.strip_prefix("pretrain-").map(str::parse) {
                Some(Ok(n)) => Variant::Pretrain(n),
                _ => return Err(Error::Config(format!("unknown ablation variant {other:?}"))),
            },
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::SgtIdentity => f.write_str("sgt-i"),
            Variant::CgtIdentity => f.write_str("cgt-i"),
            Variant::BothIdentity => f.write_str("sgt-cgt-i"),
            Variant::ClassifierGraphOnly => f.write_str("c-clas-g-only"),
            Variant::ClassifierSentenceOnly => f.write_str("c-clas-s-only"),
            Variant::TransferGraphOnly => f.write_str("t-clas-g-only"),
            Variant::TransferSentenceOnly => f.write_str("t-clas-s-only"),
            Variant::Pretrain(n) => write!(f, "pretrain-{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<RunConfig>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub out_dir: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// `running`, `ok` or `failed: <message>`.
    pub status: String,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Content hash of a file, or of every file under a directory in name
/// order.
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            h.update(e.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
            h.update(hash_path(&e)?.as_bytes());
        }
    } else {
        h.update(fs::read(path)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutLock {
    path: PathBuf,
}

impl OutLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(OutLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Data(format!("{} is in use by another run (remove {} if it is stale)", dir.display(), path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// The configuration a command runs with: toy defaults, then the config
/// file, then `--set` pairs, then `--seed`.
pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::toy(),
    };
    for pair in &global.settings {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        apply_setting(&mut config, k, v)?;
    }
    if let Some(seed) = global.seed {
        config.train.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_synth(out: &Path, per_style: usize, seed: u64) -> Result<SyntheticCorpus> {
    if per_style == 0 {
        return Err(Error::Config("--per-style must be at least 1".into()));
    }
    let corpus = SyntheticCorpus::generate(per_style, seed);
    corpus.write(out)?;
    Ok(corpus)
}

pub fn cmd_prepare(corpus: &[PathBuf], conllu: &[PathBuf], out: &Path, options: &PrepareOptions) -> Result<PrepareReport> {
    if !conllu.is_empty() && conllu.len() != corpus.len() {
        return Err(Error::Config(format!("{} corpus files but {} CoNLL-U files", corpus.len(), conllu.len())));
    }
    let mut records = Vec::new();
    let mut parses = Vec::new();
    for (i, path) in corpus.iter().enumerate() {
        let recs = read_corpus(path)?;
        let parsed = match conllu.get(i) {
            Some(p) => attach_parses(&recs, Some(&load_conllu(p)?))?,
            None => attach_parses(&recs, None)?,
        };
        records.extend(recs);
        parses.extend(parsed);
    }
    let (dataset, report) = prepare_dataset(&records, &parses, options)?;
    dataset.save(out)?;
    fs::write(out.join("prepare_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// One line of `train_log.jsonl`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogLine {
    /// Epochs completed across both phases, counting from 1.
    pub epoch: usize,
    pub phase: Phase,
    pub losses: EpochLog,
}

struct RunWriter {
    log: BufWriter<File>,
    last: PathBuf,
    train: crate::trainer::TrainConfig,
}

impl TrainObserver for RunWriter {
    fn epoch_end(&mut self, state: &ModelState, phase: Phase, log: &EpochLog) -> Result<()> {
        let line = TrainLogLine { epoch: state.epoch(), phase, losses: *log };
        serde_json::to_writer(&mut self.log, &line)?;
        self.log.write_all(b"\n")?;
        self.log.flush()?;
        log::info!("epoch {} ({phase:?}): {log:?}", state.epoch());
        save_checkpoint(state, &self.train, &self.last)
    }
}

/// Trains on `data`, appending to `train_log.jsonl` and keeping
/// `last.ckpt` (every epoch) and `best.ckpt` (the validated best) in `out`.
pub fn cmd_train(data_dir: &Path, config: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<ModelState> {
    let data = Dataset::load(data_dir)?;
    let mut state = match resume {
        Some(path) => {
            let (mut state, _) = load_checkpoint(path, Some(&data.vocab.hash()))?;
            if state.model.config != config.model {
                return Err(Error::Config("model settings differ from the checkpoint being resumed".into()));
            }
            state.optimizer.lr = config.train.learning_rate;
            state
        }
        None => ModelState::new(&config.model, &config.train, data.vocab.len(), data.vocab.hash())?,
    };
    fs::write(out.join("config.txt"), config.to_text())?;
    let log = OpenOptions::new().create(true).append(true).open(out.join(TRAIN_LOG_FILE))?;
    let mut writer = RunWriter { log: BufWriter::new(log), last: out.join(LAST_CHECKPOINT), train: config.train.clone() };
    fit(&mut state, &data, &config.train, &mut writer)?;
    save_checkpoint(&state, &config.train, out.join(BEST_CHECKPOINT))?;
    Ok(state)
}

/// Greedy transfers of `examples` to the opposite style, rendered as
/// tokens.
pub fn transfer_examples(state: &ModelState, examples: &[Example], vocab: &Vocab, max_len: usize) -> Result<Vec<Transfer>> {
    examples
        .par_iter()
        .map(|ex| {
            let target = ex.style.flipped();
            let out = state.model.transfer(&state.store, &ex.graph, target, max_len)?;
            Ok(Transfer { source: vocab.decode(&ex.graph.ids), output: vocab.decode(&out), target })
        })
        .collect()
}

/// Writes one transferred sentence per input record to
/// `<out>/outputs.txt`; returns the number of lines.
pub fn cmd_transfer(checkpoint: &Path, data_dir: &Path, input: &Path, conllu: Option<&Path>, target: TargetArg, out: &Path) -> Result<usize> {
    let vocab = Vocab::load(data_dir.join(Dataset::VOCAB_FILE))?;
    let (state, train) = load_checkpoint(checkpoint, Some(&vocab.hash()))?;
    let records = read_corpus(input)?;
    let parses = match conllu {
        Some(p) => attach_parses(&records, Some(&load_conllu(p)?))?,
        None => attach_parses(&records, None)?,
    };
    let flags = EdgeFlags { symmetrize: state.model.config.symmetrize, self_loops: state.model.config.self_loops };
    let mut lines = Vec::with_capacity(records.len());
    for (i, (record, parse)) in records.iter().zip(&parses).enumerate() {
        let graph = filter_and_encode(parse, &vocab, usize::MAX, flags).map_err(|r| match r {
            Rejection::Empty => Error::Parse { path: input.to_path_buf(), line: i + 1, msg: "empty sentence".into() },
            Rejection::TooLong { .. } => unreachable!("no length limit"),
        })?;
        let style = match target {
            TargetArg::Flip => record.style.flipped(),
            TargetArg::Zero => Style::ZERO,
            TargetArg::One => Style::ONE,
        };
        let max_len = train.decode_max_len.max(graph.len() + 2);
        let ids = state.model.transfer(&state.store, &graph, style, max_len)?;
        lines.push(vocab.decode(&ids).join(" "));
    }
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    fs::write(out.join(OUTPUTS_FILE), text)?;
    Ok(lines.len())
}

/// What `eval` scores.
#[derive(Clone, Debug)]
pub enum EvalSource {
    Checkpoint(PathBuf),
    /// One output line per sentence of the split, in order.
    Outputs(PathBuf),
}

pub fn cmd_eval(source: &EvalSource, data_dir: &Path, split: Split, out: &Path, artifacts_dir: &Path) -> Result<MetricReport> {
    let data = Dataset::load(data_dir)?;
    let examples = match split {
        Split::Dev => &data.dev,
        Split::Test => &data.test,
    };
    if examples.is_empty() {
        return Err(Error::Data(format!("the {split:?} split is empty")));
    }
    let artifacts = EvalArtifacts::load_or_prepare(artifacts_dir, &data, EvalClassifierConfig::default())?;
    let transfers = match source {
        EvalSource::Checkpoint(path) => {
            let (state, train) = load_checkpoint(path, Some(&data.vocab.hash()))?;
            let transfers = transfer_examples(&state, examples, &data.vocab, train.decode_max_len)?;
            let text: String = transfers.iter().map(|t| t.output.join(" ") + "\n").collect();
            fs::write(out.join(OUTPUTS_FILE), text)?;
            transfers
        }
        EvalSource::Outputs(path) => {
            let text = fs::read_to_string(path)?;
            let lines: Vec<&str> = text.lines().collect();
            if lines.len() != examples.len() {
                return Err(Error::Data(format!("{} has {} lines for {} sentences", path.display(), lines.len(), examples.len())));
            }
            examples
                .iter()
                .zip(lines)
                .map(|(ex, line)| Transfer {
                    source: data.vocab.decode(&ex.graph.ids),
                    output: line.split_whitespace().map(str::to_lowercase).collect(),
                    target: ex.style.flipped(),
                })
                .collect()
        }
    };
    let report = evaluate_run(&transfers, &artifacts)?;
    report.save(out.join(REPORT_FILE))?;
    Ok(report)
}

/// One row of an ablation comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub report: MetricReport,
}

impl AblationRow {
    pub const HEADER: &'static str = "variant\tseed\taccu\temd\tmasked_wmd\tbleu\tskipped_empty_after_mask";

    pub fn to_tsv(&self) -> String {
        let s = &self.report.summary;
        let wmd = s.masked_wmd.map_or_else(|| "nan".to_string(), |w| format!("{w:.4}"));
        format!("{}\t{}\t{:.4}\t{:.4}\t{wmd}\t{:.2}\t{}", self.variant, self.seed, s.accu, s.emd, s.bleu, s.skipped_empty_after_mask)
    }
}

/// Trains `variant` from scratch on `data` and scores its test transfers.
pub fn run_variant(data: &Dataset, base: &RunConfig, variant: Variant, artifacts: &EvalArtifacts) -> Result<(ModelState, AblationRow)> {
    let mut config = base.clone();
    variant.apply(&mut config);
    config.validate()?;
    let mut state = ModelState::new(&config.model, &config.train, data.vocab.len(), data.vocab.hash())?;
    fit(&mut state, data, &config.train, &mut ())?;
    let transfers = transfer_examples(&state, &data.test, &data.vocab, config.train.decode_max_len)?;
    let report = evaluate_run(&transfers, artifacts)?;
    Ok((state, AblationRow { variant, seed: config.train.seed, report }))
}

pub fn cmd_ablate(data_dir: &Path, config: &RunConfig, variant: Variant, out: &Path, artifacts_dir: &Path) -> Result<AblationRow> {
    let data = Dataset::load(data_dir)?;
    let artifacts = EvalArtifacts::load_or_prepare(artifacts_dir, &data, EvalClassifierConfig::default())?;
    let (state, row) = run_variant(&data, config, variant, &artifacts)?;
    let mut applied = config.clone();
    variant.apply(&mut applied);
    save_checkpoint(&state, &applied.train, out.join(BEST_CHECKPOINT))?;
    row.report.save(out.join(REPORT_FILE))?;
    let table = out.join(ABLATION_FILE);
    let fresh = !table.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(table)?;
    if fresh {
        writeln!(f, "{}", AblationRow::HEADER)?;
    }
    writeln!(f, "{}", row.to_tsv())?;
    Ok(row)
}

fn require_out(global: &GlobalArgs) -> Result<PathBuf> {
    global.out.clone().ok_or_else(|| Error::Config("--out is required".into()))
}

fn digests(paths: &[&Path]) -> Result<Vec<InputDigest>> {
    paths.iter().map(|p| Ok(InputDigest { path: p.display().to_string(), sha256: hash_path(p)? })).collect()
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let global = &cli.global;
    if let Some(n) = global.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // only the first call in a process can size the global pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = require_out(global)?;
    let config = resolve_config(global)?;
    let seed = config.train.seed;
    let (name, inputs): (&str, Vec<&Path>) = match &cli.command {
        Command::Prepare(a) => ("prepare", a.corpus.iter().chain(&a.conllu).map(PathBuf::as_path).collect()),
        Command::Synth(_) => ("synth", vec![]),
        Command::Train(a) => ("train", std::iter::once(a.data.as_path()).chain(a.resume.as_deref()).collect()),
        Command::Transfer(a) => ("transfer", [a.checkpoint.as_path(), a.data.as_path(), a.input.as_path()].into_iter().chain(a.conllu.as_deref()).collect()),
        Command::Eval(a) => ("eval", std::iter::once(a.data.as_path()).chain(a.checkpoint.as_deref()).chain(a.outputs.as_deref()).collect()),
        Command::Ablate(a) => ("ablate", vec![a.data.as_path()]),
    };
    let mut inputs: Vec<&Path> = inputs;
    if let Some(c) = &global.config {
        inputs.push(c);
    }
    let _lock = OutLock::acquire(&out)?;
    let mut manifest = RunManifest {
        command: name.to_string(),
        config: matches!(cli.command, Command::Train(_) | Command::Ablate(_)).then(|| config.clone()),
        seed: Some(seed),
        inputs: digests(&inputs)?,
        out_dir: out.display().to_string(),
        started_unix: unix_now(),
        finished_unix: None,
        status: "running".into(),
    };
    manifest.save(&out)?;
    let result = dispatch(&cli.command, &config, seed, &out);
    manifest.finished_unix = Some(unix_now());
    manifest.status = match &result {
        Ok(()) => "ok".into(),
        Err(e) => format!("failed: {e}"),
    };
    manifest.save(&out)?;
    result
}

fn dispatch(command: &Command, config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let corpus = cmd_synth(out, a.per_style, seed)?;
            println!("wrote {} sentences to {}", corpus.records.len(), out.display());
        }
        Command::Prepare(a) => {
            let options = PrepareOptions {
                max_len: a.max_len,
                min_count: a.min_count,
                split: (a.train_frac, a.dev_frac),
                seed,
                flags: EdgeFlags { symmetrize: config.model.symmetrize, self_loops: config.model.self_loops },
            };
            let r = cmd_prepare(&a.corpus, &a.conllu, out, &options)?;
            println!("kept {} of {} sentences ({} too long, {} empty)", r.kept, r.input, r.too_long, r.empty);
        }
        Command::Train(a) => {
            let state = cmd_train(&a.data, config, out, a.resume.as_deref())?;
            println!("trained {} epochs; best {:?}", state.epoch(), state.best);
        }
        Command::Transfer(a) => {
            let n = cmd_transfer(&a.checkpoint, &a.data, &a.input, a.conllu.as_deref(), a.target, out)?;
            println!("wrote {n} lines to {}", out.join(OUTPUTS_FILE).display());
        }
        Command::Eval(a) => {
            let source = match (&a.checkpoint, &a.outputs) {
                (Some(c), _) => EvalSource::Checkpoint(c.clone()),
                (None, Some(o)) => EvalSource::Outputs(o.clone()),
                (None, None) => return Err(Error::Config("eval needs --checkpoint or --outputs".into())),
            };
            let artifacts = a.artifacts.clone().unwrap_or_else(|| out.join("artifacts"));
            let report = cmd_eval(&source, &a.data, a.split, out, &artifacts)?;
            print!("{}", report.to_text()?.split(crate::metrics::JSONL_MARKER).next().unwrap_or(""));
        }
        Command::Ablate(a) => {
            let artifacts = a.artifacts.clone().unwrap_or_else(|| out.join("artifacts"));
            let row = cmd_ablate(&a.data, config, a.variant, out, &artifacts)?;
            println!("{}\n{}", AblationRow::HEADER, row.to_tsv());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 success, 1 usage error, 2 data error, 3 internal error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_round_trip_through_their_names() {
        for name in ["full", "sgt-i", "cgt-i", "sgt-cgt-i", "c-clas-g-only", "c-clas-s-only", "t-clas-g-only", "t-clas-s-only", "pretrain-3"] {
            assert_eq!(name.parse::<Variant>().unwrap().to_string(), name);
        }
        assert!("pretrain-x".parse::<Variant>().is_err());
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn variants_touch_the_intended_switch() {
        let base = RunConfig::toy();
        let changed = |v: Variant| {
            let mut c = base.clone();
            v.apply(&mut c);
            c
        };
        assert_eq!(changed(Variant::Full), base);
        assert!(changed(Variant::SgtIdentity).model.sgt_identity);
        assert!(!changed(Variant::SgtIdentity).model.cgt_identity);
        let both = changed(Variant::BothIdentity).model;
        assert!(both.sgt_identity && both.cgt_identity);
        assert!(!changed(Variant::ClassifierGraphOnly).train.classifier_s);
        assert!(!changed(Variant::ClassifierSentenceOnly).train.classifier_g);
        assert!(!changed(Variant::TransferGraphOnly).train.transfer_s);
        assert!(!changed(Variant::TransferSentenceOnly).train.transfer_g);
        assert_eq!(changed(Variant::Pretrain(0)).train.warmup_epochs, 0);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutLock::acquire(dir.path()), Err(Error::Data(_))));
        drop(lock);
        assert!(OutLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(main_with_args(["gtae", "frobnicate"]), 1);
        assert_eq!(main_with_args(["gtae", "synth"]), 1);
        assert_eq!(main_with_args(["gtae", "synth", "--out", "/nonexistent/x", "--threads", "0"]), 1);
        assert_eq!(main_with_args(["gtae", "--help"]), 0);
    }

    #[test]
    fn settings_layer_in_order() {
        let global = GlobalArgs { seed: Some(9), settings: vec!["d_model=32".into(), "seed=4".into()], ..Default::default() };
        let c = resolve_config(&global).unwrap();
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.train.seed, 9);
        let bad = GlobalArgs { settings: vec!["d_model".into()], ..Default::default() };
        assert!(matches!(resolve_config(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn directory_hash_covers_names_and_contents() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a"), "1").unwrap();
        let h1 = hash_path(dir.path()).unwrap();
        fs::write(dir.path().join("a"), "2").unwrap();
        let h2 = hash_path(dir.path()).unwrap();
        assert_ne!(h1, h2);
        assert_eq!(h2, hash_path(dir.path()).unwrap());
    }
}
