//! Subcommands of the `wavebridge` binary.
//!
//! Each command is a plain function over already-parsed arguments so the
//! integration tests can drive it without spawning a process.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wavebridge::denoiser::{Checkpoint, CountingDenoiser};
use wavebridge::dsp::{read_wav, write_wav, AudioBuffer, Encoding};
use wavebridge::harness::bench::run_benchmark;
use wavebridge::harness::config::Config;
use wavebridge::harness::corpus::{degrade_manifest, load_pairs, synth_corpus, write_source_corpus};
use wavebridge::harness::inspect::{inspect_schedule, INSPECT_POINTS};
use wavebridge::harness::train::{resolve_scale, run, LossRow, Phase, TrainState};
use wavebridge::harness::upsample;
use wavebridge::metrics::{aggregate, evaluate_pair, AggregateReport, MetricsReport};
use wavebridge::sampler::{InferenceGrid, SamplerKind};
use wavebridge::{Error, ErrorKind, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.bsrk";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Parser)]
#[command(name = "wavebridge", version, about = "Waveform super-resolution with a tractable Schrödinger bridge")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic source corpus and its manifest.
    Synth(SynthArgs),
    /// Low-pass and resample every file of a source manifest.
    Degrade(DegradeArgs),
    /// Train (or resume training) the bridge denoiser.
    Train(TrainArgs),
    /// Fine-tune a checkpoint with the auxiliary spectral losses.
    Finetune(FinetuneArgs),
    /// Upsample WAV files with a trained checkpoint.
    Sample(SampleArgs),
    /// Score predictions (or the inputs themselves) against references.
    Eval(EvalArgs),
    /// Tabulate schedule coefficients and low-band energy of mean trajectories.
    InspectSchedule(InspectArgs),
    /// Train all ablation variants on the synthetic corpus and report metrics.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration; defaults are used for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of items; defaults to `data.train_items`.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Source manifest written by `synth` (one `path` column).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Pair manifest written by `degrade`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.steps` (total steps, counting resumed ones).
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from this checkpoint; its configuration snapshot is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Supplies the `aux` and `finetune` sections; the rest comes from the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `finetune.steps`.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Ode1,
    Sde1,
    Sde2,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Ode1 => SamplerKind::Ode1,
            SamplerArg::Sde1 => SamplerKind::Sde1,
            SamplerArg::Sde2 => SamplerKind::Sde2,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Intervals of a linear grid.
    #[arg(long, conflicts_with = "preset")]
    pub steps: Option<usize>,
    /// Fixed few-step grid with this many denoiser calls.
    #[arg(long, value_parser = ["1", "2", "4"])]
    pub preset: Option<String>,
    #[arg(long, value_enum, conflicts_with = "preset")]
    pub sampler: Option<SamplerArg>,
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Band-limited inputs at the target rate.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pair manifest with references and cutoffs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Directory of predictions named like the manifest's `lr_path` files.
    /// Without it the degraded inputs are scored (passthrough baseline).
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long)]
    pub out_json: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = INSPECT_POINTS)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long)]
    pub out_json: PathBuf,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|p| println!("wrote {}", p.display())),
        Command::Degrade(a) => cmd_degrade(&a).map(|p| println!("wrote {}", p.display())),
        Command::Train(a) => cmd_train(&a).map(|p| println!("wrote {}", p.display())),
        Command::Finetune(a) => cmd_finetune(&a).map(|p| println!("wrote {}", p.display())),
        Command::Sample(a) => {
            for (path, nfe) in cmd_sample(&a)? {
                println!("{}\tnfe={nfe}", path.display());
            }
            Ok(())
        }
        Command::Eval(a) => {
            let agg = cmd_eval(&a)?;
            println!("{}", serde_json::to_string_pretty(&agg).expect("plain struct"));
            Ok(())
        }
        Command::InspectSchedule(a) => cmd_inspect(&a).map(|n| println!("wrote {n} rows to {}", a.out.display())),
        Command::Benchmark(a) => cmd_benchmark(&a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn data_err(path: &Path, msg: impl ToString) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| data_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| data_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| data_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<PathBuf> {
    let cfg = a.cfg.load()?;
    let count = a.count.unwrap_or(cfg.data.train_items);
    if count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    let items = synth_corpus(&cfg.data, cfg.item_len(), count, cfg.seed)?;
    create_dir(&a.out)?;
    write_source_corpus(&a.out, &items)
}

pub fn cmd_degrade(a: &DegradeArgs) -> Result<PathBuf> {
    let cfg = a.cfg.load()?;
    degrade_manifest(&a.manifest, &a.out, &cfg.data, cfg.seed)
}

fn load_pair_list(manifest: &Path) -> Result<Vec<wavebridge::bridge::WaveformPair>> {
    Ok(load_pairs(manifest)?.into_iter().map(|(_, p)| p).collect())
}

/// Appends loss rows, writing the header only into a new file.
struct LossLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl LossLog {
    fn open(path: PathBuf, append: bool) -> Result<Self> {
        let existing = append && path.is_file();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(existing)
            .truncate(!existing)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(!existing).from_writer(file);
        Ok(LossLog { path, writer })
    }

    fn push(&mut self, row: &LossRow) -> Result<()> {
        self.writer.serialize(row).map_err(|e| data_err(&self.path, e))?;
        self.writer.flush().map_err(|e| io_err(&self.path, e))
    }
}

fn train_loop(state: &mut TrainState, cfg: &Config, pairs_path: &Path, out: &Path, phase: Phase, steps: u64, append: bool) -> Result<PathBuf> {
    let pairs = load_pair_list(pairs_path)?;
    create_dir(out)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut log = LossLog::open(out.join(LOSS_FILE), append)?;
    run(state, &pairs, cfg, phase, steps, |row| {
        log.push(row)?;
        println!(
            "step {:>7}  bridge {:.5}  mag {:.4}  phase {:.4}  total {:.5}",
            row.step, row.l_bridge, row.l_mag, row.l_phase, row.l_total
        );
        Ok(())
    })?;
    state.to_checkpoint(cfg).save(&ckpt_path)?;
    Ok(ckpt_path)
}

pub fn cmd_train(a: &TrainArgs) -> Result<PathBuf> {
    let (mut cfg, mut state) = match &a.resume {
        Some(p) => TrainState::from_checkpoint(&Checkpoint::load(p)?)?,
        None => {
            let cfg = a.cfg.load()?;
            let pairs = load_pair_list(&a.pairs)?;
            let scale = resolve_scale(&cfg, &pairs)?;
            let state = TrainState::init(&cfg, scale)?;
            (cfg, state)
        }
    };
    if let Some(n) = a.steps {
        cfg.train.steps = n;
    }
    let remaining = cfg.train.steps.saturating_sub(state.step);
    train_loop(&mut state, &cfg, &a.pairs, &a.out, Phase::Bridge, remaining, a.resume.is_some())
}

pub fn cmd_finetune(a: &FinetuneArgs) -> Result<PathBuf> {
    if !a.checkpoint.is_file() {
        return Err(data_err(&a.checkpoint, "checkpoint not found"));
    }
    let (mut cfg, mut state) = TrainState::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    if let Some(p) = &a.config {
        let over = Config::load(p)?;
        cfg.aux = over.aux;
        cfg.finetune = over.finetune;
        cfg.validate()?;
    }
    let steps = a.steps.unwrap_or(cfg.finetune.steps);
    train_loop(&mut state, &cfg, &a.pairs, &a.out, Phase::Finetune, steps, false)
}

/// Grid selected by the sampling flags over the checkpoint's defaults.
pub fn sample_grid(cfg: &Config, a: &SampleArgs) -> Result<InferenceGrid> {
    let mut s = cfg.sampler.clone();
    if let Some(p) = &a.preset {
        s.preset = Some(p.parse().map_err(|_| Error::Config(format!("bad preset {p}")))?);
    } else if a.steps.is_some() || a.sampler.is_some() {
        s.preset = None;
    }
    if let Some(n) = a.steps {
        s.steps = n;
    }
    if let Some(k) = a.sampler {
        s.kind = k.into();
    }
    if let Some(t) = a.t_min {
        s.t_min = t;
    }
    s.grid()
}

/// Upsamples every input into `out`; returns output paths with the number
/// of denoiser calls spent on each.
pub fn cmd_sample(a: &SampleArgs) -> Result<Vec<(PathBuf, usize)>> {
    let (cfg, state) = TrainState::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let grid = sample_grid(&cfg, a)?;
    let sched = cfg.schedule.params()?;
    let seed = a.seed.unwrap_or(cfg.seed);
    create_dir(&a.out)?;
    let model = CountingDenoiser::new(&state.model);
    let mut done = Vec::with_capacity(a.inputs.len());
    for (i, input) in a.inputs.iter().enumerate() {
        let audio = read_wav(input)?;
        if audio.rate != cfg.data.target_rate {
            return Err(data_err(
                input,
                format!("sample rate {} differs from the model's {}", audio.rate, cfg.data.target_rate),
            ));
        }
        model.reset();
        let y = upsample(&model, &audio.samples, state.scale, &grid, &sched, seed, i as u64)?;
        let name = input.file_name().ok_or_else(|| data_err(input, "not a file"))?;
        let path = a.out.join(name);
        write_wav(&path, &AudioBuffer::new(y, audio.rate)?, Encoding::Float32)?;
        done.push((path, model.calls()));
    }
    Ok(done)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceRow {
    pub id: String,
    pub lsd: f64,
    pub lsd_lf: f64,
    pub lsd_hf: f64,
    pub si_snr: f64,
    pub ssim: f64,
    pub cutoff_hz: f64,
}

impl UtteranceRow {
    fn new(id: String, m: &MetricsReport) -> Self {
        UtteranceRow {
            id,
            lsd: m.lsd,
            lsd_lf: m.lsd_lf,
            lsd_hf: m.lsd_hf,
            si_snr: m.si_snr,
            ssim: m.ssim,
            cutoff_hz: m.cutoff_hz,
        }
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<AggregateReport> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (entry, pair) in load_pairs(&a.pairs)? {
        let pred = match &a.pred_dir {
            None => pair.x_lr.clone(),
            Some(dir) => {
                let name = entry.lr_path.file_name().ok_or_else(|| data_err(&a.pairs, "bad lr_path"))?;
                let path = dir.join(name);
                if !path.is_file() {
                    return Err(data_err(&path, format!("no prediction for {}", entry.id)));
                }
                let audio = read_wav(&path)?;
                if audio.len() != pair.len() {
                    return Err(data_err(&path, format!("{} samples, reference has {}", audio.len(), pair.len())));
                }
                audio.samples
            }
        };
        let metrics = evaluate_pair(&pred, &pair.x_hr, pair.cutoff_hz, pair.target_rate)?;
        rows.push(UtteranceRow::new(entry.id, &metrics));
        reports.push(metrics);
    }
    let agg = aggregate(&reports)?;
    write_csv(&a.out_csv, &rows)?;
    write_json(&a.out_json, &agg)?;
    Ok(agg)
}

pub fn cmd_inspect(a: &InspectArgs) -> Result<usize> {
    let cfg = a.cfg.load()?;
    let rows = inspect_schedule(&cfg, a.points)?;
    write_csv(&a.out, &rows)?;
    Ok(rows.len())
}

pub fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let report = run_benchmark(&cfg, |line| eprintln!("{line}"))?;
    write_csv(&a.out_csv, &report.rows)?;
    let mut checks = Vec::new();
    for kind in &cfg.benchmark.schedules {
        for &steps in &cfg.benchmark.steps {
            for c in report.checks(kind.name(), steps)? {
                println!("{} {}/{steps}: {} ({})", if c.pass { "PASS" } else { "FAIL" }, kind.name(), c.name, c.detail);
                checks.push((kind.name(), steps, c));
            }
        }
    }
    #[derive(Serialize)]
    struct Out<'a> {
        report: &'a wavebridge::harness::BenchmarkReport,
        checks: Vec<(&'static str, usize, wavebridge::harness::Check)>,
    }
    write_json(&a.out_json, &Out { report: &report, checks })?;
    println!("runtime {:.1} s", report.runtime_secs);
    Ok(())
}
