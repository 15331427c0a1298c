//! Command-line front end: `generate`, `train`, `eval` and `predict`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{self, Model};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{self, DataLayout};
use crate::pipeline::{evaluate_pipeline, prediction_line, render_overlay, Pipeline};
use crate::recognizers::{Recognizer, RecognizerKind};
use crate::synth::GrayImage;
use crate::train::EpochStats;
use crate::vocab::Vocabulary;

#[derive(Debug, Parser)]
#[command(name = "scriptorium", version, about = "Handwritten form segmentation and recognition")]
pub struct Cli {
    /// Experiment config (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate form, crop and noisy-test splits.
    Generate(DataArgs),
    /// Train one model and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate checkpoints on a split and print a JSON report.
    Eval(EvalArgs),
    /// Run the full pipeline on form images and print JSON Lines.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset root.
    #[arg(long, env = "SCRIPTORIUM_DATA_DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Detector,
    Word,
    Char,
    Seq2seq,
    Pipeline,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Detector => "detector",
            Task::Word => "word",
            Task::Char => "char",
            Task::Seq2seq => "seq2seq",
            Task::Pipeline => "pipeline",
        }
    }

    fn recognizer(self) -> Option<RecognizerKind> {
        match self {
            Task::Word => Some(RecognizerKind::Word),
            Task::Char => Some(RecognizerKind::Char),
            Task::Seq2seq => Some(RecognizerKind::Seq2seq),
            Task::Detector | Task::Pipeline => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to write (default: `<checkpoint_dir>/<task>.ckpt`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue training from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Initialize the character model's backbone from a word checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Train on the augmented split regardless of the config.
    #[arg(long)]
    pub augmented: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    /// Model checkpoint (the recognizer for `--task pipeline`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Detector checkpoint for `--task pipeline`.
    #[arg(long)]
    pub detector: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to evaluate, e.g. `test`, `valid` or `test_noisy`.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub recognizer: PathBuf,
    /// Lexicon, one word per line (default: the dataset vocabulary).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Write `<name>.overlay.pgm` images with boxes and text into this directory.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Form images (binary PGM).
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

/// Line-oriented `key=value` log to stderr and optionally a file.
struct Log {
    file: Option<File>,
}

impl Log {
    fn new(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(File::create(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Ok(Log { file })
    }

    fn record(&mut self, fields: &[(&str, String)]) {
        let line = fields
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        eprintln!("{line}");
        if let Some(f) = &mut self.file {
            // A failed log write must not abort training.
            let _ = writeln!(f, "{line}");
        }
    }
}

fn epoch_fields(task: &str, s: &EpochStats) -> Vec<(&'static str, String)> {
    vec![
        ("event", "epoch".into()),
        ("task", task.into()),
        ("epoch", s.epoch.to_string()),
        ("loss", format!("{:.6}", s.mean_loss)),
        ("steps", s.steps.to_string()),
    ]
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_root(args: &DataArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.data
        .clone()
        .or_else(|| cfg.paths.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn write_json(value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Invalid(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, which then stays in use.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate(args) => generate(&cfg, args),
        Command::Train(args) => train(&cfg, args),
        Command::Eval(args) => eval(&cfg, args),
        Command::Predict(args) => predict(&cfg, args),
    }
}

fn generate(cfg: &ExperimentConfig, args: &DataArgs) -> Result<()> {
    let layout = DataLayout::new(data_root(args, cfg));
    let splits = experiment::build_splits(cfg)?;
    experiment::write_splits(&splits, cfg, &layout)?;
    let mut log = Log::new(None)?;
    log.record(&[
        ("event", "generate".into()),
        ("dir", layout.root.display().to_string()),
        ("seed", cfg.seed.to_string()),
        ("train_forms", splits.train_forms.len().to_string()),
        ("train_da_forms", splits.train_forms_da.as_ref().map_or(0, Vec::len).to_string()),
        ("test_forms", splits.test_forms.len().to_string()),
        ("train_crops", splits.train_crops.len().to_string()),
        ("train_da_crops", splits.train_crops_da.as_ref().map_or(0, Vec::len).to_string()),
        ("test_crops", splits.test_crops.len().to_string()),
    ]);
    Ok(())
}

fn train(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<()> {
    let layout = DataLayout::new(data_root(&args.data, cfg));
    let split = if args.augmented || cfg.data.train_on_augmented {
        "train_da"
    } else {
        "train"
    };
    let out = match &args.out {
        Some(p) => p.clone(),
        None => {
            let dir = cfg
                .paths
                .checkpoint_dir
                .clone()
                .unwrap_or_else(|| layout.root.join("checkpoints"));
            experiment::default_checkpoint_path(&dir, args.task.name())
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut log = Log::new(Some(&out.with_extension("log")))?;
    log.record(&[
        ("event", "train_start".into()),
        ("task", args.task.name().into()),
        ("split", split.into()),
        ("seed", cfg.seed.to_string()),
    ]);
    let resumed = args.resume.as_deref().map(checkpoint::load).transpose()?;
    let task = args.task.name();
    let model = match args.task {
        Task::Pipeline => {
            return Err(Error::Config("the pipeline is trained as detector plus recognizer".into()))
        }
        Task::Detector => {
            let forms = layout.load_forms(split)?;
            let init = resumed.map(Model::into_detector).transpose()?;
            let (m, _) = experiment::train_detector(cfg, &forms, init, |s| log.record(&epoch_fields(task, s)))?;
            Model::Detector(m)
        }
        t => {
            let kind = t.recognizer().expect("recognizer task");
            let vocab = layout.load_vocab()?;
            let crops = layout.load_crops(split)?;
            let mut model = match resumed {
                Some(m) => {
                    let r = m.into_recognizer()?;
                    if r.kind() != kind {
                        return Err(Error::Checkpoint(format!(
                            "cannot resume {} training from a {} checkpoint",
                            kind.name(),
                            r.kind().name()
                        )));
                    }
                    r
                }
                None => experiment::new_recognizer(cfg, kind, &vocab)?,
            };
            if let Some(path) = &args.init_from {
                let Recognizer::Char(ch) = &mut model else {
                    return Err(Error::Config("--init-from applies to the char task only".into()));
                };
                let Recognizer::Word(word) = checkpoint::load(path)?.into_recognizer()? else {
                    return Err(Error::Checkpoint("--init-from needs a word checkpoint".into()));
                };
                let n = ch.init_from_word_model(&word)?;
                log.record(&[("event", "init_from_word".into()), ("tensors", n.to_string())]);
            }
            let (m, _) = experiment::train_recognizer(cfg, model, &crops, |s| log.record(&epoch_fields(task, s)))?;
            Model::Recognizer(m)
        }
    };
    checkpoint::save(&model, &out)?;
    log.record(&[
        ("event", "checkpoint".into()),
        ("task", task.into()),
        ("path", out.display().to_string()),
        ("params", model.params().num_values().to_string()),
    ]);
    Ok(())
}

fn eval(cfg: &ExperimentConfig, args: &EvalArgs) -> Result<()> {
    let layout = DataLayout::new(data_root(&args.data, cfg));
    let model = checkpoint::load(&args.checkpoint)?;
    let report = match args.task {
        Task::Detector => {
            let det = model.into_detector()?;
            experiment::evaluate_detector(&det, &layout.load_forms(&args.split)?)?
        }
        Task::Pipeline => {
            let det_path = args
                .detector
                .as_ref()
                .ok_or_else(|| Error::Config("--task pipeline needs --detector".into()))?;
            let detector = checkpoint::load(det_path)?.into_detector()?;
            let recognizer = model.into_recognizer()?;
            let pipeline = Pipeline::new(detector, recognizer, layout.load_vocab()?);
            evaluate_pipeline(&layout.load_forms(&args.split)?, &pipeline)?.0
        }
        t => {
            let kind = t.recognizer().expect("recognizer task");
            let rec = model.into_recognizer()?;
            if rec.kind() != kind {
                return Err(Error::Checkpoint(format!(
                    "checkpoint holds a {} recognizer, not {}",
                    rec.kind().name(),
                    kind.name()
                )));
            }
            let vocab = layout.load_vocab()?;
            experiment::evaluate_recognizer(&rec, &vocab, &layout.load_crops(&args.split)?)?
        }
    };
    write_json(&report)
}

fn predict(cfg: &ExperimentConfig, args: &PredictArgs) -> Result<()> {
    let detector = checkpoint::load(&args.detector)?.into_detector()?;
    let recognizer = checkpoint::load(&args.recognizer)?.into_recognizer()?;
    let vocab = match (&args.vocab, &recognizer) {
        (Some(p), _) => Vocabulary::load(p)?,
        (None, Recognizer::Word(m)) => m.vocab.clone(),
        (None, _) => DataLayout::new(data_root(&args.data, cfg)).load_vocab()?,
    };
    let pipeline = Pipeline::new(detector, recognizer, vocab);
    if let Some(dir) = &args.overlay {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for path in &args.images {
        let image = GrayImage::load_pgm(path)?;
        let result = pipeline.run(&image)?;
        println!("{}", prediction_line(path, &result)?);
        if let Some(dir) = &args.overlay {
            let stem = path.file_stem().map_or("form".into(), |s| s.to_string_lossy().into_owned());
            render_overlay(&image, &result).save_pgm(&dir.join(format!("{stem}.overlay.pgm")))?;
        }
    }
    Ok(())
}

/// Parse arguments, run, and map errors to exit codes.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("event=error code={} message={:?}", e.exit_code(), e.to_string());
            e.exit_code()
        }
    }
}
