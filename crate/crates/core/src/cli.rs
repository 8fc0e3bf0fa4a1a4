//! Command-line front end. [`run`] parses argv, dispatches a subcommand and
//! returns the process exit code.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | other failure |
//! | 2 | unknown flag or subcommand |
//! | 3 | missing required flag |
//! | 4 | invalid flag value or config |
//! | 5 | unreadable or unwritable path |
//! | 6 | bad data (decode failure, missing mask, empty split) |
//! | 7 | bad checkpoint |

use std::cell::RefCell;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::bench::{analyze, bench_fps, BenchConfig};
use crate::checkpoint;
use crate::data::{self, DataConfig, Dataset};
use crate::error::Error;
use crate::metrics::{binarize, Aggregation, MetricReport, RunSummary};
use crate::model::{ModelConfig, SlpNet};
use crate::ops::resize::{resize_bilinear, resize_nearest};
use crate::synth::{self, SynthConfig};
use crate::train::{self, AdamConfig, DecayMode, LossKind, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "slpnet", version, about = "Lightweight skin lesion segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on an image/mask directory pair.
    Train(TrainArgs),
    /// Evaluate one or more checkpoints on a split.
    Eval(EvalArgs),
    /// Write binary masks for an image or a directory of images.
    Predict(PredictArgs),
    /// Print parameter and FLOP tables.
    Analyze(AnalyzeArgs),
    /// Measure forward-pass throughput.
    Bench(BenchArgs),
    /// Generate the synthetic disc dataset.
    GenSynth(GenSynthArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    image_dir: Option<String>,
    #[arg(long)]
    mask_dir: Option<String>,
    #[arg(long)]
    mask_suffix: Option<String>,
    #[arg(long)]
    split_train: Option<PathBuf>,
    #[arg(long)]
    split_test: Option<PathBuf>,
    /// Square network resolution (multiple of 8).
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Plain `key=value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    /// coupled | decoupled
    #[arg(long)]
    decay_mode: Option<String>,
    /// bce | bce+dice
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Split evaluated after training: auto | train | test | none
    #[arg(long)]
    eval: Option<String>,
    /// per-image | global
    #[arg(long)]
    agg: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeat to average several runs.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// train | test | all
    #[arg(long)]
    subset: Option<String>,
    #[arg(long)]
    agg: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    /// Key-value report file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Without a checkpoint a freshly initialised model is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Parallel model instances, one thread each.
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Unknown(String),
    Missing(String),
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn code_and_class(&self) -> (i32, &'static str) {
        match self {
            CliError::Unknown(_) => (2, "unknown-flag"),
            CliError::Missing(_) => (3, "missing-flag"),
            CliError::Usage(_) => (4, "usage"),
            CliError::Lib(e) => match e {
                Error::InvalidConfig(_) | Error::IndivisibleInput { .. } => (4, "config"),
                Error::Io { .. } => (5, "io"),
                Error::Decode { .. }
                | Error::MissingMask(_)
                | Error::EmptySplit(_)
                | Error::NonBinary { .. }
                | Error::NonSquare { .. } => (6, "data"),
                Error::Checkpoint(_) | Error::ChecksumMismatch | Error::UnsupportedVersion(_) => (7, "checkpoint"),
                _ => (1, "error"),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Unknown(m) | CliError::Missing(m) | CliError::Usage(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// `key=value` settings from `--config`, consulted after flags and before
/// built-in defaults. Keys are flag names without the leading dashes.
struct Settings {
    values: BTreeMap<String, String>,
    used: RefCell<HashSet<String>>,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Settings {
            values,
            used: RefCell::new(HashSet::new()),
        })
    }

    fn get<T>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key}: {e}"))),
            None => Ok(None),
        }
    }

    fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn required<T>(&self, flag: Option<T>, key: &str) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(flag, key)?
            .ok_or_else(|| CliError::Missing(format!("the --{key} flag is required")))
    }

    /// Rejects config keys that no setting of this subcommand consumed.
    fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        match self.values.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(CliError::Usage(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }
}

fn parse_value<T>(s: &str) -> CliResult<T>
where
    T: FromStr<Err = Error>,
{
    s.parse().map_err(CliError::Lib)
}

fn data_config(s: &Settings, a: DataArgs, default_size: usize) -> CliResult<DataConfig> {
    let mut cfg = DataConfig::new(s.required(a.data_root, "data-root")?);
    cfg.image_dir = s.or(a.image_dir, "image-dir", cfg.image_dir)?;
    cfg.mask_dir = s.or(a.mask_dir, "mask-dir", cfg.mask_dir)?;
    cfg.mask_suffix = s.or(a.mask_suffix, "mask-suffix", cfg.mask_suffix)?;
    cfg.split_train = s.get(a.split_train, "split-train")?;
    cfg.split_test = s.get(a.split_test, "split-test")?;
    cfg.size = s.or(a.size, "size", default_size)?;
    Ok(cfg)
}

fn model_config(size: usize, seed: u64) -> CliResult<ModelConfig> {
    let cfg = ModelConfig::default().with_seed(seed).with_input_size(size, size);
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let s = Settings::load(a.config.as_deref())?;
    let dcfg = data_config(&s, a.data, 224)?;
    let out_dir: PathBuf = s.required(a.out_dir, "out-dir")?;
    let seed = s.or(a.seed, "seed", 0)?;
    let defaults = TrainConfig::default();
    let adam = AdamConfig {
        lr: s.or(a.lr, "lr", defaults.adam.lr)?,
        weight_decay: s.or(a.wd, "wd", defaults.adam.weight_decay)?,
        decay_mode: parse_value::<DecayMode>(&s.or(a.decay_mode, "decay-mode", "coupled".into())?)?,
        ..AdamConfig::default()
    };
    let tcfg = TrainConfig {
        epochs: s.or(a.epochs, "epochs", defaults.epochs)?,
        batch_size: s.or(a.batch, "batch", defaults.batch_size)?,
        adam,
        seed,
        loss: parse_value::<LossKind>(&s.or(a.loss, "loss", "bce".into())?)?,
        augment: s.or(a.augment, "augment", true)?,
        checkpoint_every: s.or(a.checkpoint_every, "checkpoint-every", defaults.checkpoint_every)?,
        out_dir: Some(out_dir.clone()),
    };
    let eval_on = s.or(a.eval, "eval", "auto".to_string())?;
    let agg = parse_value::<Aggregation>(&s.or(a.agg, "agg", "per-image".into())?)?;
    s.finish()?;
    if !["auto", "train", "test", "none"].contains(&eval_on.as_str()) {
        return Err(CliError::Usage(format!(
            "--eval must be auto, train, test or none, got {eval_on:?}"
        )));
    }
    if tcfg.batch_size == 0 {
        return Err(CliError::Usage("--batch must be at least 1".into()));
    }

    let mut model = SlpNet::<f32>::build(model_config(dcfg.size, seed)?)?;
    let split = data::split(data::discover(&dcfg)?, &dcfg)?;
    let train_set = Dataset::new("train", split.train, dcfg.size, true)?;

    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let log_path = out_dir.join("train.log");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let _ = writeln!(
        log,
        "t={:.3} start train_images={} test_images={} size={} epochs={} batch={}",
        unix_time(),
        train_set.len(),
        split.test.len(),
        dcfg.size,
        tcfg.epochs,
        tcfg.batch_size
    );
    let epochs = tcfg.epochs;
    let mut report = train::train(&mut model, &train_set, &tcfg, |e| {
        eprintln!(
            "epoch {}/{epochs} loss {:.6} ({:.1}s)",
            e.epoch, e.mean_loss, e.wall_secs
        );
        let _ = writeln!(
            log,
            "t={:.3} epoch={} loss={:.6} steps={} wall_secs={:.3}",
            unix_time(),
            e.epoch,
            e.mean_loss,
            e.steps,
            e.wall_secs
        );
    })?;

    let eval_set = match eval_on.as_str() {
        "train" => Some(train_set),
        "test" => Some(Dataset::new("test", split.test, dcfg.size, false)?),
        "auto" if !split.test.is_empty() => Some(Dataset::new("test", split.test, dcfg.size, false)?),
        _ => None,
    };
    if let Some(set) = eval_set {
        let r = train::evaluate(&model, &set, agg, tcfg.batch_size)?;
        println!("evaluation on {} split", set.name());
        print!("{}", r.to_text());
        report.eval = Some(r);
    }
    let _ = writeln!(log, "t={:.3} done steps={}", unix_time(), report.steps);
    write_file(&out_dir.join("report.txt"), &report.to_kv(&tcfg))?;
    if let Some(p) = report.final_checkpoint() {
        println!("checkpoint {}", p.display());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let s = Settings::load(a.config.as_deref())?;
    let mut ckpts = a.checkpoint;
    if let Some(list) = s.get::<String>(None, "checkpoint")? {
        if ckpts.is_empty() {
            ckpts = list.split(',').map(|p| PathBuf::from(p.trim())).collect();
        }
    }
    if ckpts.is_empty() {
        return Err(CliError::Missing("the --checkpoint flag is required".into()));
    }
    let models = ckpts
        .iter()
        .map(|p| checkpoint::load::<f32>(p, None))
        .collect::<Result<Vec<_>, _>>()?;
    let default_size = models[0].config().input_size.0;
    let dcfg = data_config(&s, a.data, default_size)?;
    let subset = s.or(a.subset, "subset", "test".to_string())?;
    let agg = parse_value::<Aggregation>(&s.or(a.agg, "agg", "per-image".into())?)?;
    let batch = s.or(a.batch, "batch", 20)?;
    let out: Option<PathBuf> = s.get(a.out, "out")?;
    s.finish()?;

    let split = data::split(data::discover(&dcfg)?, &dcfg)?;
    let pairs = match subset.as_str() {
        "train" => split.train,
        "test" => split.test,
        "all" => split.train.into_iter().chain(split.test).collect(),
        other => {
            return Err(CliError::Usage(format!(
                "--subset must be train, test or all, got {other:?}"
            )))
        }
    };
    let set = Dataset::new(&subset, pairs, dcfg.size, models.len() > 1)?;
    let reports = models
        .iter()
        .map(|m| train::evaluate(m, &set, agg, batch))
        .collect::<Result<Vec<MetricReport>, _>>()?;
    let kv = if reports.len() == 1 {
        print!("{}", reports[0].to_text());
        reports[0].to_kv()
    } else {
        for (p, r) in ckpts.iter().zip(&reports) {
            println!("{}: DSC {:.2}%", p.display(), 100.0 * r.dsc());
        }
        let summary = RunSummary::from_reports(&reports);
        print!("{}", summary.to_text());
        format!(
            "aggregation={}\nimages={}\n{}",
            agg.as_str(),
            set.len(),
            summary.to_kv()
        )
    };
    if let Some(out) = out {
        write_file(&out, &kv)?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CliResult<()> {
    let s = Settings::load(a.config.as_deref())?;
    let ckpt: Option<PathBuf> = s.get(a.checkpoint, "checkpoint")?;
    let input: PathBuf = s.required(a.input, "input")?;
    let out: PathBuf = s.required(a.out, "out")?;
    let seed = s.or(a.seed, "seed", 0)?;
    let size_flag = s.get(a.size, "size")?;
    s.finish()?;

    let model = match &ckpt {
        Some(p) => checkpoint::load::<f32>(p, None)?,
        None => SlpNet::build(model_config(size_flag.unwrap_or(224), seed)?)?,
    };
    let size = size_flag.unwrap_or(model.config().input_size.0);
    model_config(size, seed)?;
    let files = if input.is_dir() {
        data::list_images(&input)?
    } else {
        vec![input]
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for f in files {
        let img = data::read_rgb(&f)?;
        let (h, w) = (img.shape().h, img.shape().w);
        let probs = model.predict(&resize_bilinear(&img, size, size)?)?;
        let mask = resize_nearest(&binarize(&probs), h, w)?;
        let stem = f
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let dst = out.join(format!("{stem}_pred.png"));
        data::write_mask(&dst, &mask)?;
        println!("{}", dst.display());
    }
    Ok(())
}

fn analysis_model(ckpt: Option<&Path>, size: usize, seed: u64) -> CliResult<SlpNet<f32>> {
    Ok(match ckpt {
        Some(p) => checkpoint::load::<f32>(p, None)?,
        None => SlpNet::build(model_config(size, seed)?)?,
    })
}

fn cmd_analyze(a: AnalyzeArgs) -> CliResult<()> {
    let s = Settings::load(a.config.as_deref())?;
    let size = s.or(a.size, "size", 224)?;
    let ckpt: Option<PathBuf> = s.get(a.checkpoint, "checkpoint")?;
    let seed = s.or(a.seed, "seed", 0)?;
    let out: Option<PathBuf> = s.get(a.out, "out")?;
    s.finish()?;
    let model = analysis_model(ckpt.as_deref(), size, seed)?;
    let report = analyze(&model, (size, size))?;
    print!("{}", report.to_text());
    if let Some(out) = out {
        write_file(&out, &report.to_kv())?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let s = Settings::load(a.config.as_deref())?;
    let d = BenchConfig::default();
    let size = s.or(a.size, "size", d.size.0)?;
    let cfg = BenchConfig {
        size: (size, size),
        warmup: s.or(a.warmup, "warmup", d.warmup)?,
        iters: s.or(a.iters, "iters", d.iters)?,
        batch: s.or(a.batch, "batch", d.batch)?,
        instances: s.or(a.instances, "instances", d.instances)?,
        seed: s.or(a.seed, "seed", d.seed)?,
    };
    let ckpt: Option<PathBuf> = s.get(a.checkpoint, "checkpoint")?;
    let out: Option<PathBuf> = s.get(a.out, "out")?;
    s.finish()?;
    let model = analysis_model(ckpt.as_deref(), size, cfg.seed)?;
    let complexity = analyze(&model, (size, size))?;
    let report = bench_fps(&model, cfg)?;
    print!("{}", report.to_text());
    if let Some(out) = out {
        write_file(&out, &report.to_kv(Some(&complexity)))?;
    }
    Ok(())
}

fn cmd_gen_synth(a: GenSynthArgs) -> CliResult<()> {
    let s = Settings::load(a.config.as_deref())?;
    let d = SynthConfig::default();
    let out: PathBuf = s.required(a.out, "out")?;
    let cfg = SynthConfig {
        count: s.or(a.count, "count", d.count)?,
        size: s.or(a.size, "size", d.size)?,
        seed: s.or(a.seed, "seed", d.seed)?,
    };
    s.finish()?;
    if cfg.size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    let ids = synth::generate(&out, cfg)?;
    println!("wrote {} pairs to {}", ids.len(), out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Bench(a) => cmd_bench(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
    }
}

fn first_line(e: &clap::Error) -> String {
    let text = e.to_string();
    let line = text.lines().next().unwrap_or_default();
    line.strip_prefix("error: ").unwrap_or(line).to_string()
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let result = match Cli::try_parse_from(argv) {
        Ok(cli) => dispatch(cli),
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = e.print();
                return 0;
            }
            ErrorKind::UnknownArgument | ErrorKind::InvalidSubcommand => Err(CliError::Unknown(first_line(&e))),
            ErrorKind::MissingRequiredArgument
            | ErrorKind::MissingSubcommand
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => Err(CliError::Missing(first_line(&e))),
            _ => Err(CliError::Usage(first_line(&e))),
        },
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let (code, class) = e.code_and_class();
            eprintln!("slpnet: error[{class}]: {}", e.message());
            code
        }
    }
}
