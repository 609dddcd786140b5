//! The `rhnmt` command line: `train`, `translate`, `evaluate` and `score`.
//!
//! Exit codes: 0 on success, 2 for usage errors (bad flags, missing input
//! files), 1 for anything that fails while running.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{
    encode_corpus, read_lines, read_parallel, write_lines, VocabOptions, Vocabulary, DEFAULT_MAX_SENTENCE_TOKENS,
};
use crate::decode::{thread_limit, translate_all, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, corpus_perplexity, tokenize_lines, Brevity};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, NmtModel};
use crate::train::{train, DevSet, EpochRecord, StepRecord, TrainHooks, TrainingConfig, TSV_HEADER};

pub const DEFAULT_SEED: u64 = 1234;
pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "rhnmt", version, about = "RHN neural machine translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build vocabularies, train a model and write checkpoints, a log and a run manifest.
    Train(Box<TrainArgs>),
    /// Translate a file of source sentences.
    Translate(TranslateArgs),
    /// Perplexity and BLEU of a checkpoint on a parallel set.
    Evaluate(EvaluateArgs),
    /// Corpus BLEU of a candidate file against a reference file.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum BleuVariant {
    /// Length ratio `min(1, c/r)` as brevity factor.
    Paper,
    /// The exponential brevity penalty of standard BLEU.
    StandardBp,
}

impl From<BleuVariant> for Brevity {
    fn from(v: BleuVariant) -> Self {
        match v {
            BleuVariant::Paper => Brevity::Ratio,
            BleuVariant::StandardBp => Brevity::Exponential,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Rerun the configuration recorded in a run manifest; other flags are ignored except --out.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    src: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    tgt: Option<PathBuf>,
    #[arg(long, requires = "dev_tgt")]
    dev_src: Option<PathBuf>,
    #[arg(long, requires = "dev_src")]
    dev_tgt: Option<PathBuf>,
    /// Existing source vocabulary (one token per line); built from --src otherwise.
    #[arg(long)]
    vocab_src: Option<PathBuf>,
    #[arg(long)]
    vocab_tgt: Option<PathBuf>,
    /// Source vocabulary size including the four reserved tokens.
    #[arg(long, default_value_t = 17_000)]
    src_vocab_size: usize,
    #[arg(long, default_value_t = 7_700)]
    tgt_vocab_size: usize,
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
    /// Pairs with a longer side are skipped.
    #[arg(long, default_value_t = DEFAULT_MAX_SENTENCE_TOKENS)]
    max_sentence_len: usize,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    /// Recurrence depth (highway micro-layers per time step).
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Stacked RHN layers.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long)]
    coupled_carry: bool,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 5.0)]
    grad_clip: f64,
    #[arg(long, conflicts_with = "grad_clip")]
    no_grad_clip: bool,
    #[arg(long)]
    no_bucketing: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Also checkpoint every N steps.
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Output directory for vocabularies, checkpoints, log and manifest.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Final checkpoint path; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelFiles {
    /// Run manifest whose checkpoint and vocabularies to use.
    #[arg(long, required_unless_present = "checkpoint")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Defaults to `src.vocab` next to the checkpoint.
    #[arg(long)]
    vocab_src: Option<PathBuf>,
    #[arg(long)]
    vocab_tgt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// 1 selects greedy search.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    beam_width: u64,
    /// Maximum output length; defaults to twice the source length plus 10.
    #[arg(long)]
    max_len: Option<usize>,
}

impl DecodeArgs {
    fn config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_width: self.beam_width as usize,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Args)]
struct TranslateArgs {
    #[command(flatten)]
    files: ModelFiles,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Source sentences, one per line.
    #[arg(long)]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write ranked hypotheses as `line ||| score ||| tokens`.
    #[arg(long)]
    nbest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    files: ModelFiles,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long, value_enum, default_value_t = BleuVariant::Paper)]
    bleu_variant: BleuVariant,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, value_enum, default_value_t = BleuVariant::Paper)]
    bleu_variant: BleuVariant,
}

/// Corpus and vocabulary settings of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub dev_src: Option<PathBuf>,
    pub dev_tgt: Option<PathBuf>,
    pub vocab_src: Option<PathBuf>,
    pub vocab_tgt: Option<PathBuf>,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub min_freq: usize,
    pub max_sentence_len: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub out_dir: PathBuf,
    pub src_vocab: PathBuf,
    pub tgt_vocab: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    /// Intermediate checkpoints in the order written.
    pub checkpoints: Vec<PathBuf>,
}

/// Everything needed to rerun a training run bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub reconstructor: bool,
    pub parameter_count: usize,
    pub artifacts: Artifacts,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: Option<f64>,
    pub steps: usize,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(*a),
        Command::Translate(a) => cmd_translate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Score(a) => cmd_score(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn manifest_from_flags(a: &TrainArgs) -> std::result::Result<RunManifest, Failure> {
    let (Some(src), Some(tgt)) = (a.src.clone(), a.tgt.clone()) else {
        return Err(Failure::Usage("--src and --tgt are required".into()));
    };
    let data = DataConfig {
        src,
        tgt,
        dev_src: a.dev_src.clone(),
        dev_tgt: a.dev_tgt.clone(),
        vocab_src: a.vocab_src.clone(),
        vocab_tgt: a.vocab_tgt.clone(),
        src_vocab_size: a.src_vocab_size,
        tgt_vocab_size: a.tgt_vocab_size,
        min_freq: a.min_freq,
        max_sentence_len: a.max_sentence_len,
    };
    let training = TrainingConfig {
        learning_rate: a.lr,
        dropout: a.dropout,
        batch_size: a.batch_size,
        epochs: a.epochs,
        beta: a.beta,
        grad_clip_norm: (!a.no_grad_clip).then_some(a.grad_clip),
        seed: a.seed,
        checkpoint_interval: a.checkpoint_interval,
        bucketing: !a.no_bucketing,
        max_steps: a.max_steps,
    };
    training.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    // Vocabulary sizes are filled in once the vocabularies exist.
    let model = ModelConfig {
        hidden: a.hidden,
        depth: a.depth,
        layers: a.layers,
        src_vocab_size: 1,
        tgt_vocab_size: 1,
        coupled_carry: a.coupled_carry,
        dropout: a.dropout,
        beta: a.beta,
    };
    model.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        data,
        reconstructor: model.has_reconstructor(),
        model,
        training,
        parameter_count: 0,
        artifacts: Artifacts::default(),
        started_at: 0.0,
        finished_at: None,
        steps: 0,
    })
}

fn load_or_build_vocab(given: Option<&Path>, lines: &[&str], max_size: usize, min_freq: usize) -> Result<Vocabulary> {
    match given {
        Some(p) => Vocabulary::load(p),
        None => Vocabulary::build(
            lines.iter().copied(),
            &VocabOptions {
                max_size: Some(max_size),
                min_freq,
            },
        ),
    }
}

/// Writes checkpoints and streams log rows as training runs.
struct RunHooks<'a> {
    log: std::io::BufWriter<fs::File>,
    log_path: PathBuf,
    checkpoint_dir: PathBuf,
    src_vocab: &'a Vocabulary,
    tgt_vocab: &'a Vocabulary,
    written: Vec<PathBuf>,
}

impl TrainHooks for RunHooks<'_> {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        writeln!(self.log, "{}", record.tsv_row()).map_err(|e| Error::io(&self.log_path, e))
    }

    fn on_epoch(&mut self, record: &EpochRecord) -> Result<()> {
        self.log.flush().map_err(|e| Error::io(&self.log_path, e))?;
        if let (Some(p), Some(b)) = (record.dev_perplexity, record.dev_bleu) {
            log::info!(
                "epoch {}: dev perplexity {p:.4}, dev BLEU {:.2}",
                record.epoch,
                100.0 * b
            );
        }
        Ok(())
    }

    fn checkpoint(&mut self, model: &NmtModel, step: usize, epoch_end: bool) -> Result<()> {
        let name = if epoch_end {
            format!("step{step:07}.epoch.ckpt")
        } else {
            format!("step{step:07}.ckpt")
        };
        let path = self.checkpoint_dir.join(name);
        save_checkpoint(&path, model, self.src_vocab, self.tgt_vocab)?;
        self.written.push(path);
        Ok(())
    }
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut manifest = match &a.manifest {
        Some(p) => {
            require_file(p, "manifest")?;
            RunManifest::load(p)?
        }
        None => manifest_from_flags(&a)?,
    };
    let d = manifest.data.clone();
    require_file(&d.src, "source corpus")?;
    require_file(&d.tgt, "target corpus")?;
    for p in [&d.dev_src, &d.dev_tgt, &d.vocab_src, &d.vocab_tgt]
        .into_iter()
        .flatten()
    {
        require_file(p, "input file")?;
    }

    let out = a.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    manifest.started_at = now();
    manifest.finished_at = None;

    let raw = read_parallel(&d.src, &d.tgt)?;
    let src_lines: Vec<&str> = raw.iter().map(|(s, _)| s.as_str()).collect();
    let tgt_lines: Vec<&str> = raw.iter().map(|(_, t)| t.as_str()).collect();
    let src_vocab = load_or_build_vocab(d.vocab_src.as_deref(), &src_lines, d.src_vocab_size, d.min_freq)?;
    let tgt_vocab = load_or_build_vocab(d.vocab_tgt.as_deref(), &tgt_lines, d.tgt_vocab_size, d.min_freq)?;
    let corpus = encode_corpus(&raw, &src_vocab, &tgt_vocab, d.max_sentence_len);
    let dev_pairs = match (&d.dev_src, &d.dev_tgt) {
        (Some(s), Some(t)) => encode_corpus(&read_parallel(s, t)?, &src_vocab, &tgt_vocab, d.max_sentence_len),
        _ => Vec::new(),
    };
    log::info!(
        "{} training pairs ({} skipped), vocabularies {} / {}",
        corpus.len(),
        raw.len() - corpus.len(),
        src_vocab.len(),
        tgt_vocab.len()
    );

    manifest.model.src_vocab_size = src_vocab.len();
    manifest.model.tgt_vocab_size = tgt_vocab.len();
    let mut model = NmtModel::new(manifest.model.clone(), manifest.training.seed)?;
    manifest.reconstructor = model.has_reconstructor();
    manifest.parameter_count = model.count_parameters();
    log::info!(
        "model: hidden {} depth {} layers {} reconstructor {}, {} parameters",
        manifest.model.hidden,
        manifest.model.depth,
        manifest.model.layers,
        manifest.reconstructor,
        manifest.parameter_count
    );

    let artifacts = Artifacts {
        out_dir: out.clone(),
        src_vocab: out.join("src.vocab"),
        tgt_vocab: out.join("tgt.vocab"),
        checkpoint: a.checkpoint.clone().unwrap_or_else(|| out.join("model.ckpt")),
        log: out.join("train_log.tsv"),
        checkpoints: Vec::new(),
    };
    src_vocab.save(&artifacts.src_vocab)?;
    tgt_vocab.save(&artifacts.tgt_vocab)?;
    manifest.artifacts = artifacts.clone();
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;

    let log_file = fs::File::create(&artifacts.log).map_err(|e| Error::io(&artifacts.log, e))?;
    let mut hooks = RunHooks {
        log: std::io::BufWriter::new(log_file),
        log_path: artifacts.log.clone(),
        checkpoint_dir: out.join("checkpoints"),
        src_vocab: &src_vocab,
        tgt_vocab: &tgt_vocab,
        written: Vec::new(),
    };
    writeln!(hooks.log, "{TSV_HEADER}").map_err(|e| Error::io(&artifacts.log, e))?;
    let dev = (!dev_pairs.is_empty()).then(|| DevSet {
        pairs: &dev_pairs,
        tgt_vocab: &tgt_vocab,
        threads: thread_limit(),
    });
    let log = train(&mut model, &corpus, dev, &manifest.training, &mut hooks)?;
    hooks.log.flush().map_err(|e| Error::io(&artifacts.log, e))?;
    save_checkpoint(&artifacts.checkpoint, &model, &src_vocab, &tgt_vocab)?;

    manifest.artifacts.checkpoints = hooks.written;
    manifest.steps = log.steps.len();
    manifest.finished_at = Some(now());
    manifest.save(&manifest_path)?;
    if let Some(last) = log.steps.last() {
        println!(
            "trained {} steps: L_d {:.6} L_r {:.6} L {:.6} ppl {:.4}",
            last.step, last.l_d, last.l_r, last.total, last.perplexity
        );
    }
    println!("checkpoint: {}", artifacts.checkpoint.display());
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

struct LoadedModel {
    model: NmtModel,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
}

fn load_model(files: &ModelFiles) -> std::result::Result<LoadedModel, Failure> {
    let from_manifest = match &files.manifest {
        Some(p) => {
            require_file(p, "manifest")?;
            Some(RunManifest::load(p)?.artifacts)
        }
        None => None,
    };
    let checkpoint = files
        .checkpoint
        .clone()
        .or_else(|| from_manifest.as_ref().map(|a| a.checkpoint.clone()))
        .ok_or_else(|| Failure::Usage("--checkpoint or --manifest is required".into()))?;
    require_file(&checkpoint, "checkpoint")?;
    let dir = checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
    let vocab_path = |given: &Option<PathBuf>, recorded: Option<PathBuf>, default: &str| {
        given.clone().or(recorded).unwrap_or_else(|| dir.join(default))
    };
    let src_path = vocab_path(
        &files.vocab_src,
        from_manifest.as_ref().map(|a| a.src_vocab.clone()),
        "src.vocab",
    );
    let tgt_path = vocab_path(
        &files.vocab_tgt,
        from_manifest.as_ref().map(|a| a.tgt_vocab.clone()),
        "tgt.vocab",
    );
    require_file(&src_path, "source vocabulary")?;
    require_file(&tgt_path, "target vocabulary")?;
    let ck = load_checkpoint(&checkpoint)?;
    let src_vocab = Vocabulary::load(&src_path)?;
    let tgt_vocab = Vocabulary::load(&tgt_path)?;
    ck.verify_vocabs(&src_vocab, &tgt_vocab)?;
    Ok(LoadedModel {
        model: ck.model,
        src_vocab,
        tgt_vocab,
    })
}

fn cmd_translate(a: TranslateArgs) -> CmdResult {
    require_file(&a.input, "input")?;
    let m = load_model(&a.files)?;
    let lines = read_lines(&a.input)?;
    let sources: Vec<Vec<usize>> = lines.iter().map(|l| m.src_vocab.encode(l)).collect();
    let decoded = translate_all(&m.model, &sources, &a.decode.config(), thread_limit())?;
    let best: Vec<String> = decoded
        .iter()
        .map(|nbest| m.tgt_vocab.decode(&nbest[0].tokens).join(" "))
        .collect();
    match &a.output {
        Some(p) => write_lines(p, &best)?,
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for l in &best {
                writeln!(out, "{l}").map_err(|e| Error::io("<stdout>", e))?;
            }
        }
    }
    if let Some(p) = &a.nbest {
        let rows: Vec<String> = decoded
            .iter()
            .enumerate()
            .flat_map(|(i, nbest)| {
                nbest
                    .iter()
                    .map(move |d| (i, d.score, d.tokens.clone()))
                    .collect::<Vec<_>>()
            })
            .map(|(i, score, tokens)| format!("{i} ||| {score} ||| {}", m.tgt_vocab.decode(&tokens).join(" ")))
            .collect();
        write_lines(p, &rows)?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    require_file(&a.src, "source file")?;
    require_file(&a.tgt, "target file")?;
    let m = load_model(&a.files)?;
    let raw = read_parallel(&a.src, &a.tgt)?;
    let pairs = encode_corpus(&raw, &m.src_vocab, &m.tgt_vocab, usize::MAX);
    if pairs.is_empty() {
        return Err(Error::Data("no non-empty sentence pairs to evaluate".into()).into());
    }
    let ppl = corpus_perplexity(&m.model, &pairs, 32)?;
    let sources: Vec<Vec<usize>> = pairs.iter().map(|p| p.source_tokens().to_vec()).collect();
    let decoded = translate_all(&m.model, &sources, &a.decode.config(), thread_limit())?;
    let candidates: Vec<Vec<String>> = decoded
        .iter()
        .map(|n| {
            m.tgt_vocab
                .decode(&n[0].tokens)
                .into_iter()
                .map(str::to_owned)
                .collect()
        })
        .collect();
    let references: Vec<Vec<String>> = pairs.iter().map(|p| p.reference.clone()).collect();
    let bleu = corpus_bleu(&candidates, &references, a.bleu_variant.into())?;
    println!("perplexity = {ppl:.6}");
    println!("{bleu}");
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> CmdResult {
    require_file(&a.candidate, "candidate file")?;
    require_file(&a.reference, "reference file")?;
    let cand = read_lines(&a.candidate)?;
    let refs = read_lines(&a.reference)?;
    if cand.len() != refs.len() {
        return Err(Error::Data(format!(
            "candidate has {} lines but reference has {}",
            cand.len(),
            refs.len()
        ))
        .into());
    }
    let report = corpus_bleu(&tokenize_lines(&cand), &tokenize_lines(&refs), a.bleu_variant.into())?;
    println!("{report}");
    Ok(())
}
