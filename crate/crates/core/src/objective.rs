//! Auxiliary fine-tuning losses.
//!
//! The magnitude loss compares STFT magnitudes at several resolutions with a
//! spectral-convergence term and a log-magnitude L1 term, optionally after an
//! A-weighting FIR. The phase loss compares instantaneous phase, group delay
//! (frequency difference of phase) and instantaneous frequency (time
//! difference) through the anti-wrapping function
//! `f(x) = |x − 2π·round(x/2π)|`, ignoring bins where either spectrum is
//! practically zero.
//!
//! Both are recorded on a [`Tape`] so they can be differentiated; the plain
//! functions [`mag_loss`] and [`phase_loss`] evaluate them directly.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::bridge::{ItemLoss, LossTerms, ScaleFactor};
use crate::dsp::{a_weighting_fir, stft, StftConfig};
use crate::error::{check_len, Error, Result};

pub use crate::autodiff::anti_wrap;

pub const LOG_EPS: f64 = 1e-7;
/// Bins with a magnitude at or below this are excluded from the phase loss.
pub const PHASE_MASK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxLossConfig {
    /// FFT sizes; the hop is a quarter of each.
    pub resolutions: Vec<usize>,
    pub lambda_mag: f64,
    pub lambda_phase: f64,
    pub a_weighting: bool,
}

impl Default for AuxLossConfig {
    fn default() -> Self {
        AuxLossConfig {
            resolutions: vec![512, 1024, 2048],
            lambda_mag: 4e-6,
            lambda_phase: 5e-6,
            a_weighting: true,
        }
    }
}

impl AuxLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::Config("aux.resolutions must not be empty".into()));
        }
        for &n in &self.resolutions {
            StftConfig::new(n).map_err(|e| Error::Config(format!("aux.resolutions: {e}")))?;
        }
        if !(self.lambda_mag >= 0.0 && self.lambda_phase >= 0.0) {
            return Err(Error::Config("aux loss weights must be nonnegative".into()));
        }
        Ok(())
    }

    fn stft_configs(&self) -> Result<Vec<StftConfig>> {
        self.resolutions.iter().map(|&n| StftConfig::new(n)).collect()
    }

    pub fn max_fft(&self) -> usize {
        self.resolutions.iter().copied().max().unwrap_or(0)
    }
}

fn check_inputs(pred_len: usize, target_len: usize, cfg: &AuxLossConfig) -> Result<()> {
    check_len(pred_len, target_len)?;
    cfg.validate()?;
    if pred_len < cfg.max_fft() {
        return Err(Error::invalid(format!(
            "signal of {pred_len} samples is shorter than the largest frame ({})",
            cfg.max_fft()
        )));
    }
    Ok(())
}

/// Zero-phase FIR filtering as a recorded op.
fn record_fir(tape: &mut Tape, x: Var, taps: &[f64]) -> Result<Var> {
    let n = tape.value(x).len();
    let row = tape.reshape(x, vec![1, n])?;
    let w = tape.constant(Tensor::new(vec![1, 1, taps.len()], taps.to_vec())?);
    let y = tape.conv1d(row, w, None, 1);
    tape.reshape(y, vec![n])
}

/// Splits a recorded `[2, F, B]` STFT into `(re, im)` matrices.
fn split(tape: &mut Tape, spec: Var) -> Result<(Var, Var)> {
    let shape = tape.value(spec).shape().to_vec();
    let re = tape.rows(spec, 0, 1);
    let re = tape.reshape(re, vec![shape[1], shape[2]])?;
    let im = tape.rows(spec, 1, 2);
    let im = tape.reshape(im, vec![shape[1], shape[2]])?;
    Ok((re, im))
}

struct TargetSpec {
    frames: usize,
    bins: usize,
    mag: Vec<f64>,
    phase: Vec<f64>,
}

fn target_spec(x: &[f64], cfg: &StftConfig) -> Result<TargetSpec> {
    let s = stft(x, cfg)?;
    Ok(TargetSpec {
        frames: s.frames,
        bins: s.bins,
        mag: s.data.iter().map(|c| (c.re * c.re + c.im * c.im).sqrt()).collect(),
        phase: s.data.iter().map(|c| c.im.atan2(c.re)).collect(),
    })
}

fn record_mag_resolution(tape: &mut Tape, pred: Var, target: &TargetSpec, cfg: StftConfig) -> Result<Var> {
    let spec = tape.stft(pred, cfg)?;
    let (re, im) = split(tape, spec)?;
    let re2 = tape.square(re);
    let im2 = tape.square(im);
    let p = tape.add(re2, im2);
    let mag = tape.sqrt(p);
    let tmag = tape.constant(Tensor::matrix(target.frames, target.bins, target.mag.clone())?);

    let d = tape.sub(mag, tmag);
    let d2 = tape.square(d);
    let num = tape.sum(d2);
    let num = tape.sqrt(num);
    let den = target.mag.iter().map(|m| m * m).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let sc = tape.scale(num, 1.0 / den);

    let lp = tape.offset(mag, LOG_EPS);
    let lp = tape.log(lp);
    let lt = tape.constant(Tensor::matrix(
        target.frames,
        target.bins,
        target.mag.iter().map(|m| (m + LOG_EPS).ln()).collect(),
    )?);
    let ld = tape.sub(lp, lt);
    let ld = tape.abs(ld);
    let log_term = tape.mean(ld);
    Ok(tape.add(sc, log_term))
}

thread_local! {
    static A_WEIGHTING: RefCell<Option<(u64, Rc<Vec<f64>>)>> = const { RefCell::new(None) };
}

// the FIR design is an 8192-point inverse FFT; training asks for the same rate every step
fn cached_a_weighting(rate: f64) -> Rc<Vec<f64>> {
    A_WEIGHTING.with(|c| {
        let mut c = c.borrow_mut();
        match &*c {
            Some((bits, taps)) if *bits == rate.to_bits() => taps.clone(),
            _ => {
                let taps = Rc::new(a_weighting_fir(rate));
                *c = Some((rate.to_bits(), taps.clone()));
                taps
            }
        }
    })
}

/// Records the multi-resolution magnitude loss of `pred` against `target`.
pub fn record_mag_loss(tape: &mut Tape, pred: Var, target: &[f64], cfg: &AuxLossConfig, rate: f64) -> Result<Var> {
    check_inputs(tape.value(pred).len(), target.len(), cfg)?;
    let (pred, target) = if cfg.a_weighting {
        let taps = cached_a_weighting(rate);
        let p = record_fir(tape, pred, &taps)?;
        let t = {
            let mut scratch = Tape::new();
            let v = scratch.constant(Tensor::vector(target.to_vec()));
            let y = record_fir(&mut scratch, v, &taps)?;
            scratch.value(y).data().to_vec()
        };
        (p, t)
    } else {
        (pred, target.to_vec())
    };
    let mut total: Option<Var> = None;
    for c in cfg.stft_configs()? {
        let ts = target_spec(&target, &c)?;
        let term = record_mag_resolution(tape, pred, &ts, c)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    Ok(total.expect("at least one resolution"))
}

/// `Σ mask·f(d) / Σ mask`, or a constant zero when the mask is empty.
fn masked_anti_wrap_mean(tape: &mut Tape, d: Var, mask: Vec<f64>) -> Result<Var> {
    let count: f64 = mask.iter().sum();
    let shape = tape.value(d).shape().to_vec();
    if count == 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let aw = tape.anti_wrap(d);
    let m = tape.constant(Tensor::new(shape, mask)?);
    let w = tape.mul(aw, m);
    let s = tape.sum(w);
    Ok(tape.scale(s, 1.0 / count))
}

fn diff_const(v: &[f64], rows: usize, cols: usize, axis: Axis) -> Vec<f64> {
    match axis {
        Axis::Rows => (0..rows - 1)
            .flat_map(|i| (0..cols).map(move |j| v[(i + 1) * cols + j] - v[i * cols + j]))
            .collect(),
        Axis::Cols => (0..rows)
            .flat_map(|i| (0..cols - 1).map(move |j| v[i * cols + j + 1] - v[i * cols + j]))
            .collect(),
    }
}

fn record_phase_resolution(tape: &mut Tape, pred: Var, target: &TargetSpec, cfg: StftConfig) -> Result<Var> {
    let (f, b) = (target.frames, target.bins);
    let spec = tape.stft(pred, cfg)?;
    let (re, im) = split(tape, spec)?;
    let valid: Vec<f64> = {
        let (vr, vi) = (tape.value(re).data(), tape.value(im).data());
        (0..f * b)
            .map(|i| {
                let pm = vr[i].hypot(vi[i]);
                if pm > PHASE_MASK_FLOOR && target.mag[i] > PHASE_MASK_FLOOR {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    };
    let phase = tape.atan2(im, re);
    let tphase = tape.constant(Tensor::matrix(f, b, target.phase.clone())?);

    let ip = tape.sub(phase, tphase);
    let ip = masked_anti_wrap_mean(tape, ip, valid.clone())?;

    let mut total = ip;
    for axis in [Axis::Cols, Axis::Rows] {
        let (r, c) = (f, b);
        if (axis == Axis::Rows && r < 2) || (axis == Axis::Cols && c < 2) {
            continue;
        }
        let dp = tape.diff(phase, axis);
        let dt = diff_const(&target.phase, r, c, axis);
        let dshape = tape.value(dp).shape().to_vec();
        let dt = tape.constant(Tensor::new(dshape, dt)?);
        let d = tape.sub(dp, dt);
        // a difference is valid when both of its cells are
        let mask: Vec<f64> = match axis {
            Axis::Rows => (0..r - 1)
                .flat_map(|i| (0..c).map(move |j| (i, j)))
                .map(|(i, j)| valid[i * c + j] * valid[(i + 1) * c + j])
                .collect(),
            Axis::Cols => (0..r)
                .flat_map(|i| (0..c - 1).map(move |j| (i, j)))
                .map(|(i, j)| valid[i * c + j] * valid[i * c + j + 1])
                .collect(),
        };
        let term = masked_anti_wrap_mean(tape, d, mask)?;
        total = tape.add(total, term);
    }
    Ok(total)
}

/// Records the multi-resolution anti-wrapping phase loss.
pub fn record_phase_loss(tape: &mut Tape, pred: Var, target: &[f64], cfg: &AuxLossConfig) -> Result<Var> {
    check_inputs(tape.value(pred).len(), target.len(), cfg)?;
    let mut total: Option<Var> = None;
    for c in cfg.stft_configs()? {
        let ts = target_spec(target, &c)?;
        let term = record_phase_resolution(tape, pred, &ts, c)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    Ok(total.expect("at least one resolution"))
}

fn evaluate(pred: &[f64], f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::vector(pred.to_vec()));
    let out = f(&mut tape, p)?;
    Ok(tape.value(out).item())
}

/// Multi-resolution magnitude loss (summed over resolutions).
///
/// ```
/// use wavebridge::objective::{mag_loss, AuxLossConfig};
///
/// let x: Vec<f64> = (0..4096).map(|i| (i as f64 * 0.01).sin()).collect();
/// let cfg = AuxLossConfig { resolutions: vec![512], a_weighting: false, ..Default::default() };
/// assert_eq!(mag_loss(&x, &x, &cfg, 48000.0).unwrap(), 0.0);
/// ```
pub fn mag_loss(pred: &[f64], target: &[f64], cfg: &AuxLossConfig, rate: f64) -> Result<f64> {
    evaluate(pred, |t, p| record_mag_loss(t, p, target, cfg, rate))
}

/// Multi-resolution anti-wrapping phase loss (summed over resolutions).
pub fn phase_loss(pred: &[f64], target: &[f64], cfg: &AuxLossConfig) -> Result<f64> {
    evaluate(pred, |t, p| record_phase_loss(t, p, target, cfg))
}

/// Bridge loss plus weighted auxiliary losses; the auxiliary terms see the
/// unscaled signals. With both weights zero the auxiliary graph is not built.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalObjective {
    pub aux: AuxLossConfig,
    pub rate: f64,
}

impl ItemLoss for FinalObjective {
    fn record(&self, tape: &mut Tape, pred: Var, x0_scaled: &[f64], s: ScaleFactor) -> Result<(Var, LossTerms)> {
        let target = tape.constant(Tensor::vector(x0_scaled.to_vec()));
        let bridge = tape.mse(pred, target);
        let mut terms = LossTerms {
            bridge: tape.value(bridge).item(),
            ..Default::default()
        };
        let mut total = bridge;
        if self.aux.lambda_mag > 0.0 || self.aux.lambda_phase > 0.0 {
            let unscaled = tape.scale(pred, 1.0 / s.get());
            let x0 = s.remove(x0_scaled);
            if self.aux.lambda_mag > 0.0 {
                let m = record_mag_loss(tape, unscaled, &x0, &self.aux, self.rate)?;
                terms.mag = tape.value(m).item();
                let w = tape.scale(m, self.aux.lambda_mag);
                total = tape.add(total, w);
            }
            if self.aux.lambda_phase > 0.0 {
                let p = record_phase_loss(tape, unscaled, &x0, &self.aux)?;
                terms.phase = tape.value(p).item();
                let w = tape.scale(p, self.aux.lambda_phase);
                total = tape.add(total, w);
            }
        }
        terms.total = tape.value(total).item();
        Ok((total, terms))
    }
}

/// Evaluates the final loss for one prediction in the scaled domain.
pub fn final_loss(
    pred_x0: &[f64],
    x0_scaled: &[f64],
    s: ScaleFactor,
    aux: &AuxLossConfig,
    rate: f64,
) -> Result<LossTerms> {
    check_len(pred_x0.len(), x0_scaled.len())?;
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::vector(pred_x0.to_vec()));
    let obj = FinalObjective { aux: aux.clone(), rate };
    Ok(obj.record(&mut tape, p, x0_scaled, s)?.1)
}
