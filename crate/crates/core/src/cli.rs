//! Command-line entry point: `synth`, `features`, `train`, `eval`, `predict`
//! and `gradcheck`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::dataio::{generate_synthetic_corpus, load_wav, CorpusDir, DatasetSplit, Label, SplitName};
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict, write_report};
use crate::model::{augment_input, prepare_features, WlannConfig};
use crate::ndiff::suite::run_primitive_suite;
use crate::ndiff::{GradCheckOptions, TensorD};
use crate::train::{fit, gradcheck_config, load_checkpoint, load_examples, model_grad_check, TensorArchive};

#[derive(Debug, Parser)]
#[command(name = "wlann", version, about = "Respiratory sound event classifier")]
pub struct Cli {
    /// Worker threads for data loading, batch gradients and evaluation
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic three-class corpus
    Synth(SynthArgs),
    /// Write the model input features of one WAV file to a tensor archive
    Features(FeaturesArgs),
    /// Train a model on the train split of a corpus
    Train(TrainArgs),
    /// Score a trained model on a test split
    Eval(EvalArgs),
    /// Classify one WAV file
    Predict(PredictArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Events per class
    #[arg(long, value_name = "N", default_value_t = 60)]
    pub n_per_class: usize,
    /// Generator seed
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Input WAV file
    #[arg(long, value_name = "FILE")]
    pub wav: PathBuf,
    /// Output tensor archive
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Config file (TOML, or JSON by extension)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Apply time warping and frequency masking
    #[arg(long)]
    pub augment: bool,
    /// Augmentation seed
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory with audio/, annotations/ and split.txt
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Config file (TOML, or JSON by extension)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of epochs
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub epochs: u64,
    /// Seed for initialization, shuffling and augmentation
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Learning rate
    #[arg(long, value_name = "LR")]
    pub lr: Option<f64>,
    /// Events per optimizer step
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Disable training-time augmentation
    #[arg(long)]
    pub no_augment: bool,
    /// Output checkpoint
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Intra,
    Inter,
}

impl From<SplitArg> for SplitName {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitName::Train,
            SplitArg::Intra => SplitName::TestIntra,
            SplitArg::Inter => SplitName::TestInter,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus directory
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Trained checkpoint
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Split to score
    #[arg(long, value_enum)]
    pub split: SplitArg,
    /// Output report (JSON)
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Input WAV file holding one event
    #[arg(long, value_name = "FILE")]
    pub wav: PathBuf,
    /// Trained checkpoint
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for the random test inputs
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
    /// Maximum accepted relative error
    #[arg(long, value_name = "TOL", default_value_t = 1e-4)]
    pub tol: f64,
    /// Coordinates probed per parameter tensor of the end-to-end model check
    #[arg(long, value_name = "N", default_value_t = 6)]
    pub model_probes: usize,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.jobs {
        Some(0) => Err(Error::Validation("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| execute(cli.command)),
        None => execute(cli.command),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

/// Built-in defaults overridden by the file, if any.
pub fn load_config(path: Option<&Path>) -> Result<WlannConfig> {
    let Some(path) = path else {
        return Ok(WlannConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        WlannConfig::from_json_str(&text)?
    } else {
        WlannConfig::from_toml_str(&text)?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn find_split(splits: [DatasetSplit; 3], name: SplitName) -> DatasetSplit {
    splits
        .into_iter()
        .find(|s| s.name == name)
        .expect("all three splits present")
}

fn synth(a: SynthArgs) -> Result<()> {
    let splits = generate_synthetic_corpus(a.n_per_class, a.seed, &a.out)?;
    for s in &splits {
        println!("{}: {} events", s.name, s.events.len());
    }
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let clip = load_wav(&a.wav)?;
    let mut input = prepare_features(&clip, &cfg)?;
    if a.augment {
        input = augment_input(&input, &cfg, a.seed)?;
    }
    let meta = json!({ "source": a.wav.display().to_string(), "augment": a.augment, "seed": a.seed });
    let spec = &input.spec;
    let mut archive = TensorArchive::new(cfg.to_json(), meta.to_string());
    archive.push(
        "logmel",
        TensorD::new(vec![spec.n_mels(), spec.n_frames()], spec.values().to_vec())?,
    );
    archive.push("waveform", input.waveform);
    archive.write(&a.out)?;
    println!("logmel {}x{} -> {}", spec.n_mels(), spec.n_frames(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if a.no_augment {
        cfg.train.augment = false;
    }
    cfg.validate()?;
    let corpus = CorpusDir::new(&a.data);
    let split = find_split(corpus.load_splits()?, SplitName::Train);
    let examples = load_examples(&corpus, &split, &cfg)?;
    log::info!("training on {} events for {} epochs", examples.len(), a.epochs);
    let state = fit(&examples, &cfg, a.epochs, Some(&a.out))?;
    match state.epoch_losses.last() {
        Some(l) => println!(
            "epoch {} step {} loss {l:.6} -> {}",
            state.epoch,
            state.step(),
            a.out.display()
        ),
        None => println!("initial checkpoint -> {}", a.out.display()),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let cfg = &ckpt.config;
    let corpus = CorpusDir::new(&a.data);
    let name = SplitName::from(a.split);
    let split = find_split(corpus.load_splits()?, name);
    let examples = load_examples(&corpus, &split, cfg)?;
    let report = evaluate(ckpt.params(), cfg, &examples, name.as_str())?;
    write_report(&a.report, &report, cfg)?;
    let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{:.2}", 100.0 * v));
    println!(
        "{}: {} events, SN {} SP {} AS {} HS {} TS {} accuracy {:.2}",
        report.split,
        report.events,
        pct(report.sn),
        pct(report.sp),
        pct(report.as_),
        pct(report.hs),
        pct(report.ts),
        100.0 * report.accuracy
    );
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let input = prepare_features(&load_wav(&a.wav)?, &ckpt.config)?;
    let (label, scores) = predict(&input, ckpt.params(), &ckpt.config)?;
    println!("{label}");
    for (k, s) in scores.iter().enumerate() {
        let name = Label::from_index(k).map_or_else(|| k.to_string(), |l| l.to_string());
        println!("{name}\t{s:.6}");
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let opts = GradCheckOptions {
        tol: a.tol,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let mut rows: Vec<(String, f64, bool)> = run_primitive_suite(a.seed, opts)?
        .into_iter()
        .map(|c| (c.op.to_string(), c.report.max_rel_err(), c.report.passed()))
        .collect();
    let model_opts = GradCheckOptions {
        max_probes: Some(a.model_probes),
        ..opts
    };
    let model = model_grad_check(&gradcheck_config(), a.seed, model_opts)?;
    rows.push(("model".into(), model.max_rel_err(), model.passed()));
    for (op, err, ok) in &rows {
        println!("{op:<26} {err:.3e} {}", if *ok { "ok" } else { "FAIL" });
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.2).map(|r| r.0.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
