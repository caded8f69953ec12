//! `mp2m` command line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, unknown config
//! keys, invalid values), 2 on data, state, format or I/O errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use mp2m_core::data::{
    extract_windows, normalize, parse_track_file_with, read_dataset, synth_generate, write_dataset, ColumnMap,
    Dataset, Sample, Split, SynthConfig, WindowConfig,
};
use mp2m_core::eval::{load_predictions, predict_with_model, save_predictions, score_records};
use mp2m_core::memory::{build_bank, MemoryBank, DEFAULT_EPS};
use mp2m_core::model::ModelConfig;
use mp2m_core::plot::emit_plot;
use mp2m_core::train::{Checkpoint, TrainConfig, Trainer};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mp2m_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(mp2m_core::Error::Argument(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mp2m", version, about = "Memory-guided diffusion trajectory forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Convert raw track files (one scene per file) into a dataset.
    Ingest(IngestArgs),
    /// Cluster the training split into a memory bank.
    BuildMemory(BuildMemoryArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Sample candidate futures for every window of a dataset split.
    Predict(PredictArgs),
    /// Best-of-K ADE/FDE on a dataset split, as a JSON report.
    Eval(EvalArgs),
    /// Render predictions as SVG files.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub patterns: usize,
    /// Training windows per pattern.
    #[arg(long, default_value_t = 100)]
    pub per_pattern: usize,
    /// Test windows per pattern.
    #[arg(long, default_value_t = 20)]
    pub test_per_pattern: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 8)]
    pub t_obs: usize,
    #[arg(long, default_value_t = 12)]
    pub t_pred: usize,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw files; the file stem becomes the scene id.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Zero-based column indices `frame,agent,x,y`.
    #[arg(long, default_value = "0,1,2,3")]
    pub columns: String,
    /// Multiplier applied to x and y.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 8)]
    pub t_obs: usize,
    #[arg(long, default_value_t = 12)]
    pub t_pred: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Frame increment between consecutive samples; inferred when absent.
    #[arg(long)]
    pub frame_step: Option<i64>,
}

#[derive(Debug, Args)]
pub struct BuildMemoryArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    /// Treat this scene as the test split and the rest as training.
    #[arg(long)]
    pub holdout: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Memory bank built from the same training split.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// `key = value` file with model and training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub holdout: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train the ablation that steers with a predicted endpoint instead of
    /// the memory bank.
    #[arg(long)]
    pub no_memory: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Write `step loss` lines here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print a progress line every this many steps (0 = never).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub holdout: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub sampling: SampleArgs,
    #[arg(long)]
    pub input: PathBuf,
    /// `train`, `test` or `all`.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub sampling: SampleArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Plot at most this many samples.
    #[arg(long, default_value_t = 10)]
    pub limit: usize,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::BuildMemory(a) => build_memory(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Plot(a) => plot(a),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    mp2m_core::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn load_dataset(path: &Path, holdout: Option<&str>) -> CliResult<Dataset> {
    let ds = read_dataset(&read_text(path)?)?;
    match holdout {
        Some(scene) => Ok(ds.hold_out_scene(scene)?),
        None => Ok(ds),
    }
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        n_patterns: a.patterns,
        n_per_pattern: a.per_pattern,
        n_test_per_pattern: a.test_per_pattern,
        noise_std: a.noise_std,
        seed: a.seed,
        t_obs: a.t_obs,
        t_pred: a.t_pred,
        ..SynthConfig::default()
    };
    let samples = synth_generate(&cfg)?;
    write_text(&a.out, &write_dataset(&samples, a.t_obs, a.t_pred)?)?;
    eprintln!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn ingest(a: IngestArgs) -> CliResult<()> {
    let mut cols = ColumnMap::parse_indices(&a.columns)?;
    cols.scale = a.scale;
    let wcfg = WindowConfig {
        t_obs: a.t_obs,
        t_pred: a.t_pred,
        stride: a.stride,
        frame_step: a.frame_step,
    };
    let mut all = Vec::new();
    for f in &a.files {
        let scene = f
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty() && !s.contains(char::is_whitespace))
            .ok_or_else(|| CliError::Usage(format!("cannot derive a scene id from {}", f.display())))?
            .to_string();
        let tracks = parse_track_file_with(&read_text(f)?, &cols)?;
        let windows = extract_windows(&tracks, &wcfg, &scene)?;
        eprintln!("{}: {} tracks, {} windows", scene, tracks.len(), windows.len());
        all.extend(windows);
    }
    write_text(&a.out, &write_dataset(&all, a.t_obs, a.t_pred)?)?;
    eprintln!("wrote {} samples to {}", all.len(), a.out.display());
    Ok(())
}

fn normalized_train(ds: &Dataset) -> CliResult<Vec<Sample>> {
    let train = ds.split(Split::Train);
    if train.is_empty() {
        return Err(mp2m_core::Error::State("dataset has no training samples".into()).into());
    }
    Ok(train.iter().map(|s| normalize(s).0).collect())
}

fn build_memory(a: BuildMemoryArgs) -> CliResult<()> {
    let ds = load_dataset(&a.data, a.holdout.as_deref())?;
    let bank = build_bank(&normalized_train(&ds)?, a.k, a.seed, a.eps)?;
    bank.save(&a.out)?;
    eprintln!("bank K={} sha256 {}", bank.k(), bank.content_hash());
    Ok(())
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Applies one setting to whichever config owns the key.
fn apply_setting(model: &mut ModelConfig, train: &mut TrainConfig, key: &str, value: &str) -> CliResult<()> {
    let res = if ModelConfig::KEYS.contains(&key) {
        model.set(key, value)
    } else if TrainConfig::KEYS.contains(&key) {
        train.set(key, value)
    } else {
        return Err(CliError::Usage(format!("unknown config key {key:?}")));
    };
    res.map_err(|e| CliError::Usage(e.to_string()))
}

/// Defaults, then the config file, then flags.
pub fn resolve_train_config(a: &TrainArgs) -> CliResult<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    if let Some(p) = &a.config {
        for (k, v) in parse_config(&read_text(p)?)? {
            apply_setting(&mut model, &mut train, &k, &v)?;
        }
    }
    if let Some(v) = a.seed {
        train.seed = v;
    }
    if let Some(v) = a.steps {
        train.steps = v;
    }
    if let Some(v) = a.lr {
        train.lr = v;
    }
    if let Some(v) = a.batch_size {
        train.batch_size = v;
    }
    if a.no_memory {
        model.use_memory = false;
    }
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        apply_setting(&mut model, &mut train, k.trim(), v.trim())?;
    }
    model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((model, train))
}

fn train(a: TrainArgs) -> CliResult<()> {
    let (model, tcfg) = resolve_train_config(&a)?;
    let ds = load_dataset(&a.data, a.holdout.as_deref())?;
    if ds.t_obs != model.t_obs || ds.t_pred != model.t_pred {
        return Err(mp2m_core::Error::State(format!(
            "dataset windows are {}+{}, config expects {}+{}",
            ds.t_obs, ds.t_pred, model.t_obs, model.t_pred
        ))
        .into());
    }
    let bank = match (&a.bank, model.use_memory) {
        (Some(p), true) => Some(MemoryBank::load(p)?),
        (None, true) => return Err(CliError::Usage("--bank is required unless --no-memory is given".into())),
        (_, false) => None,
    };
    let train_samples = ds.split(Split::Train);
    let mut trainer = Trainer::new(model, tcfg, &train_samples, bank.as_ref())?;
    let mut resolved = BTreeMap::new();
    for (k, v) in trainer.net.cfg.entries().into_iter().chain(trainer.cfg.entries()) {
        resolved.insert(k, v);
    }
    for (k, v) in &resolved {
        eprintln!("config {k} = {v}");
    }
    eprintln!(
        "training on {} windows, {} parameters",
        train_samples.len(),
        trainer.store.num_scalars()
    );
    let mut log = String::new();
    let every = a.log_every;
    trainer.run(|r| {
        log.push_str(&format!("{} {}\n", r.step, mp2m_core::textio::fmt_f64(r.loss.diffusion)));
        if every > 0 && r.step % every == 0 {
            eprintln!(
                "step {} loss {:.5} endpoint {:.5} grad_norm {:.3}",
                r.step, r.loss.diffusion, r.loss.endpoint, r.grad_norm
            );
        }
    })?;
    trainer.checkpoint().save(&a.out)?;
    if let Some(p) = &a.log {
        write_text(p, &log)?;
    }
    eprintln!("wrote checkpoint to {}", a.out.display());
    Ok(())
}

fn select_split(ds: &Dataset, split: &str) -> CliResult<Vec<Sample>> {
    let samples = match split {
        "all" => ds.samples.clone(),
        s => {
            let sp: Split = s
                .parse()
                .map_err(|_| CliError::Usage(format!("split must be train, test or all, got {s:?}")))?;
            ds.split(sp)
        }
    };
    if samples.is_empty() {
        return Err(mp2m_core::Error::State(format!("split {split:?} is empty")).into());
    }
    Ok(samples)
}

struct Loaded {
    ckpt: Checkpoint,
    bank: Option<MemoryBank>,
}

fn load_model(s: &SampleArgs) -> CliResult<Loaded> {
    if s.k == 0 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let ckpt = Checkpoint::load(&s.checkpoint)?;
    let bank = s.bank.as_deref().map(MemoryBank::load).transpose()?;
    ckpt.check_bank(bank.as_ref())?;
    Ok(Loaded { ckpt, bank })
}

fn predict(a: PredictArgs) -> CliResult<()> {
    let l = load_model(&a.sampling)?;
    let ds = load_dataset(&a.input, a.sampling.holdout.as_deref())?;
    let samples = select_split(&ds, &a.split)?;
    let (net, store) = l.ckpt.network()?;
    let recs = predict_with_model(
        &net,
        &store,
        l.bank.as_ref(),
        &samples,
        a.sampling.k,
        a.sampling.seed,
        a.sampling.workers,
    )?;
    save_predictions(&recs, &a.out)?;
    eprintln!("wrote {} forecasts to {}", recs.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let l = load_model(&a.sampling)?;
    let ds = load_dataset(&a.data, a.sampling.holdout.as_deref())?;
    let samples = select_split(&ds, &a.split)?;
    let (net, store) = l.ckpt.network()?;
    let recs = predict_with_model(
        &net,
        &store,
        l.bank.as_ref(),
        &samples,
        a.sampling.k,
        a.sampling.seed,
        a.sampling.workers,
    )?;
    let label = match &a.sampling.holdout {
        Some(scene) => format!("{}:{scene}", a.split),
        None => a.split.clone(),
    };
    let report = score_records(&recs, &label, a.sampling.seed)?;
    let json = report.to_json();
    print!("{json}");
    if let Some(p) = &a.out {
        write_text(p, &json)?;
    }
    Ok(())
}

fn plot(a: PlotArgs) -> CliResult<()> {
    let recs = load_predictions(&a.pred)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    for (i, r) in recs.iter().take(a.limit).enumerate() {
        let p = a.out.join(format!("{i:04}_{}_{}.svg", r.scene_id, r.agent_id));
        emit_plot(r, &p)?;
    }
    eprintln!("wrote {} plots to {}", recs.len().min(a.limit), a.out.display());
    Ok(())
}
