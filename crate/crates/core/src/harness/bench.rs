//! Upsampling, corpus evaluation and the ablation benchmark.
//!
//! The benchmark trains on a synthetic corpus at one fixed input rate and
//! reports, per schedule and step count, the metrics of four systems: the
//! passthrough baseline (`x̂ = x_lr`), the bridge trained with the scale
//! factor, the same without it (`s = 1`), and the first one fine-tuned with
//! the auxiliary losses.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Config, ScaleSetting};
use super::corpus::{degrade_corpus, item_rng, synth_corpus};
use super::train::{resolve_scale, run, LossRow, Phase, TrainState};
use crate::bridge::{ScaleFactor, WaveformPair};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_pair, AggregateReport, MetricsReport};
use crate::objective::mag_loss;
use crate::sampler::{sample, Gaussian, InferenceGrid};
use crate::schedule::ScheduleParams;

const SAMPLING_STREAM: u64 = 0x5a4d_0000_0000_0002;
const TEST_STREAM: u64 = 0x7e57_0000_0000_0003;

/// Upsamples one observation. Stochastic samplers draw from a generator
/// fixed by `(seed, index)`.
pub fn upsample<D: Denoiser + ?Sized>(
    model: &D,
    x_lr: &[f64],
    scale: ScaleFactor,
    grid: &InferenceGrid,
    sched: &ScheduleParams,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    let mut noise = Gaussian(item_rng(seed ^ SAMPLING_STREAM, index));
    sample(model, x_lr, scale, grid, sched, &mut noise)
}

/// Metrics of `outputs[i]` against `pairs[i].x_hr`, split at each pair's
/// cutoff.
pub fn evaluate_outputs(outputs: &[Vec<f64>], pairs: &[WaveformPair]) -> Result<Vec<MetricsReport>> {
    if outputs.len() != pairs.len() {
        return Err(Error::LengthMismatch {
            left: outputs.len(),
            right: pairs.len(),
        });
    }
    outputs
        .iter()
        .zip(pairs)
        .map(|(y, p)| evaluate_pair(y, &p.x_hr, p.cutoff_hz, p.target_rate))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Passthrough,
    Bridge,
    BridgeNoScale,
    BridgeAux,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Passthrough => "passthrough",
            Variant::Bridge => "bridge",
            Variant::BridgeNoScale => "bridge_no_sf",
            Variant::BridgeAux => "bridge_aux",
        }
    }
}

/// One line of the benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub variant: Variant,
    pub schedule: String,
    pub steps: usize,
    pub nfe: usize,
    pub lsd: f64,
    pub lsd_lf: f64,
    pub lsd_hf: f64,
    pub si_snr: f64,
    pub ssim: f64,
    /// Mean multi-resolution magnitude loss of the outputs.
    pub l_mag: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub scale_factor: f64,
    pub train_steps: u64,
    pub finetune_steps: u64,
    pub train_items: usize,
    pub test_items: usize,
    /// Final logged training loss per schedule and variant.
    pub final_losses: Vec<(String, Variant, LossRow)>,
    pub runtime_secs: f64,
}

impl BenchmarkReport {
    pub fn row(&self, variant: Variant, schedule: &str, steps: usize) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.schedule == schedule && (variant == Variant::Passthrough || r.steps == steps))
    }
}

/// Outcome of one direction-of-effect check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl BenchmarkReport {
    /// Direction-of-effect checks at one schedule and step count.
    pub fn checks(&self, schedule: &str, steps: usize) -> Result<Vec<Check>> {
        let get = |v: Variant| {
            self.row(v, schedule, steps)
                .ok_or_else(|| Error::Config(format!("no {} row for {schedule} at {steps} steps", v.name())))
        };
        let pass = get(Variant::Passthrough)?;
        let sf = get(Variant::Bridge)?;
        let no_sf = get(Variant::BridgeNoScale)?;
        let aux = get(Variant::BridgeAux)?;
        let hf_drop = 1.0 - sf.lsd_hf / pass.lsd_hf;
        let lf_ratio = sf.lsd_lf / pass.lsd_lf;
        let aux_change = aux.lsd / sf.lsd - 1.0;
        Ok(vec![
            Check {
                name: "lsd_hf_below_passthrough".into(),
                pass: hf_drop >= 0.2,
                detail: format!("LSD-HF {:.4} vs passthrough {:.4} ({:.1}% lower, need >= 20%)", sf.lsd_hf, pass.lsd_hf, 100.0 * hf_drop),
            },
            Check {
                name: "lsd_lf_near_passthrough".into(),
                pass: lf_ratio <= 1.5,
                detail: format!("LSD-LF {:.4} vs passthrough {:.4} (ratio {lf_ratio:.3}, need <= 1.5)", sf.lsd_lf, pass.lsd_lf),
            },
            Check {
                name: "scale_factor_helps".into(),
                pass: no_sf.lsd >= sf.lsd,
                detail: format!("LSD without scale factor {:.4}, with {:.4}", no_sf.lsd, sf.lsd),
            },
            Check {
                name: "aux_keeps_lsd".into(),
                pass: aux_change <= 0.02,
                detail: format!("LSD after fine-tuning {:.4} vs {:.4} ({:+.2}%, need <= +2%)", aux.lsd, sf.lsd, 100.0 * aux_change),
            },
            Check {
                name: "aux_reduces_l_mag".into(),
                pass: aux.l_mag < sf.l_mag,
                detail: format!("L_mag after fine-tuning {:.5} vs {:.5}", aux.l_mag, sf.l_mag),
            },
        ])
    }
}

/// Train and test pairs of the benchmark corpus.
pub fn benchmark_corpus(cfg: &Config) -> Result<(Vec<WaveformPair>, Vec<WaveformPair>)> {
    let len = cfg.item_len();
    let build = |count: usize, seed: u64| -> Result<Vec<WaveformPair>> {
        let items = synth_corpus(&cfg.data, len, count, seed)?;
        Ok(degrade_corpus(&items, &cfg.data, seed)?.into_iter().map(|(_, p)| p).collect())
    };
    Ok((build(cfg.data.train_items, cfg.seed)?, build(cfg.data.test_items, cfg.seed ^ TEST_STREAM)?))
}

fn row(variant: Variant, schedule: &str, steps: usize, nfe: usize, agg: AggregateReport, l_mag: f64) -> BenchmarkRow {
    BenchmarkRow {
        variant,
        schedule: schedule.to_string(),
        steps,
        nfe,
        lsd: agg.lsd,
        lsd_lf: agg.lsd_lf,
        lsd_hf: agg.lsd_hf,
        si_snr: agg.si_snr,
        ssim: agg.ssim,
        l_mag,
        n: agg.n,
    }
}

fn mean_mag_loss(outputs: &[Vec<f64>], pairs: &[WaveformPair], cfg: &Config) -> Result<f64> {
    let rate = cfg.data.target_rate as f64;
    let mut total = 0.0;
    for (y, p) in outputs.iter().zip(pairs) {
        total += mag_loss(y, &p.x_hr, &cfg.aux, rate)?;
    }
    Ok(total / outputs.len() as f64)
}

/// Runs the full benchmark described in the module docs. `progress`
/// receives one line per finished phase.
pub fn run_benchmark(cfg: &Config, mut progress: impl FnMut(&str)) -> Result<BenchmarkReport> {
    let started = Instant::now();
    let (train, test) = benchmark_corpus(cfg)?;
    if test.is_empty() || train.is_empty() {
        return Err(Error::Config("benchmark needs data.train_items and data.test_items > 0".into()));
    }
    let scale = resolve_scale(cfg, &train)?;
    progress(&format!(
        "corpus: {} train / {} test items, scale factor {:.4}",
        train.len(),
        test.len(),
        scale.get()
    ));

    let mut rows = Vec::new();
    let mut final_losses = Vec::new();
    let x_lr: Vec<Vec<f64>> = test.iter().map(|p| p.x_lr.clone()).collect();
    for &kind in &cfg.benchmark.schedules {
        let mut c = cfg.clone();
        c.schedule.kind = kind;
        c.schedule.beta0 = None;
        c.schedule.beta1 = None;
        if kind == cfg.schedule.kind {
            c.schedule = cfg.schedule.clone();
        }
        let sched = c.schedule.params()?;
        let name = kind.name();
        let pass = evaluate_outputs(&x_lr, &test)?;
        rows.push(row(Variant::Passthrough, name, 0, 0, aggregate(&pass)?, mean_mag_loss(&x_lr, &test, &c)?));

        let mut trained = Vec::new();
        for (variant, s) in [(Variant::Bridge, scale), (Variant::BridgeNoScale, ScaleFactor::unit())] {
            let mut state = TrainState::init(&c, s)?;
            let mut last = None;
            run(&mut state, &train, &c, Phase::Bridge, c.train.steps, |r| {
                last = Some(*r);
                Ok(())
            })?;
            if let Some(r) = last {
                final_losses.push((name.to_string(), variant, r));
            }
            progress(&format!("{name}: trained {} ({} steps)", variant.name(), c.train.steps));
            trained.push((variant, state));
        }
        let mut aux = trained[0].1.clone();
        let mut last = None;
        run(&mut aux, &train, &c, Phase::Finetune, c.finetune.steps, |r| {
            last = Some(*r);
            Ok(())
        })?;
        if let Some(r) = last {
            final_losses.push((name.to_string(), Variant::BridgeAux, r));
        }
        progress(&format!("{name}: fine-tuned ({} steps)", c.finetune.steps));
        trained.push((Variant::BridgeAux, aux));

        for &steps in &cfg.benchmark.steps {
            let grid = InferenceGrid::linear(steps, c.sampler.t_min, c.sampler.kind)?;
            for (variant, state) in &trained {
                let outputs = x_lr
                    .iter()
                    .enumerate()
                    .map(|(i, x)| upsample(&state.model, x, state.scale, &grid, &sched, c.seed, i as u64))
                    .collect::<Result<Vec<_>>>()?;
                let reports = evaluate_outputs(&outputs, &test)?;
                let r = row(*variant, name, steps, grid.nfe(), aggregate(&reports)?, mean_mag_loss(&outputs, &test, &c)?);
                progress(&format!(
                    "{name}/{}/{steps} steps: LSD {:.3} (LF {:.3}, HF {:.3})",
                    variant.name(),
                    r.lsd,
                    r.lsd_lf,
                    r.lsd_hf
                ));
                rows.push(r);
            }
        }
    }
    Ok(BenchmarkReport {
        rows,
        scale_factor: scale.get(),
        train_steps: cfg.train.steps,
        finetune_steps: cfg.finetune.steps,
        train_items: train.len(),
        test_items: test.len(),
        final_losses,
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}

/// Whether the configured scale factor is estimated from data.
pub fn uses_estimated_scale(cfg: &Config) -> bool {
    matches!(cfg.train.scale_factor, ScaleSetting::Keyword(_))
}
