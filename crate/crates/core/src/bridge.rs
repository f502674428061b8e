//! Data scaling, forward marginal sampling and the bridge training objective.
//!
//! Both endpoints are multiplied by a dataset-level scale factor `s` before
//! they enter the bridge. A training example draws `t ~ U(t_min, 1)`,
//! samples `x_t` from the closed-form marginal and regresses the denoiser's
//! `x0` prediction onto the scaled target.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor, Var};
use crate::denoiser::Trainable;
use crate::error::{check_len, Error, Result};
use crate::schedule::ScheduleParams;

/// Default scale factor for speech-like data.
pub const DEFAULT_SCALE: f64 = 12.0;
/// Lower end of the training time distribution.
pub const DEFAULT_T_MIN: f64 = 1e-5;

/// An aligned high-resolution target and its degraded observation, both at
/// the target rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformPair {
    pub x_hr: Vec<f64>,
    pub x_lr: Vec<f64>,
    pub target_rate: f64,
    pub input_rate: f64,
    pub cutoff_hz: f64,
}

impl WaveformPair {
    pub fn new(x_hr: Vec<f64>, x_lr: Vec<f64>, target_rate: f64, input_rate: f64, cutoff_hz: f64) -> Result<Self> {
        check_len(x_hr.len(), x_lr.len())?;
        if !(input_rate > 0.0 && input_rate <= target_rate) {
            return Err(Error::invalid(format!(
                "input rate {input_rate} must be in (0, {target_rate}]"
            )));
        }
        if !(cutoff_hz > 0.0 && cutoff_hz <= input_rate / 2.0) {
            return Err(Error::invalid(format!(
                "cutoff {cutoff_hz} Hz must be in (0, {}] Hz",
                input_rate / 2.0
            )));
        }
        Ok(WaveformPair {
            x_hr,
            x_lr,
            target_rate,
            input_rate,
            cutoff_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.x_hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_hr.is_empty()
    }

    /// Sub-window `[start, start + len)` of both signals.
    pub fn window(&self, start: usize, len: usize) -> Result<WaveformPair> {
        if start + len > self.len() {
            return Err(Error::invalid(format!(
                "window {start}..{} exceeds signal length {}",
                start + len,
                self.len()
            )));
        }
        Ok(WaveformPair {
            x_hr: self.x_hr[start..start + len].to_vec(),
            x_lr: self.x_lr[start..start + len].to_vec(),
            ..*self
        })
    }
}

/// Positive multiplier applied to both bridge endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFactor(f64);

impl ScaleFactor {
    pub fn new(s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("scale factor must be positive and finite, got {s}")));
        }
        Ok(ScaleFactor(s))
    }

    /// `s = 1`, i.e. no data scaling.
    pub fn unit() -> Self {
        ScaleFactor(1.0)
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v * self.0).collect()
    }

    pub fn remove(self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v / self.0).collect()
    }
}

impl Default for ScaleFactor {
    fn default() -> Self {
        ScaleFactor(DEFAULT_SCALE)
    }
}

/// Streaming pooled variance of `x_lr − x_hr` (Welford updates, Chan merges).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScaleEstimator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl ScaleEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_pair(&mut self, pair: &WaveformPair) {
        for (lr, hr) in pair.x_lr.iter().zip(&pair.x_hr) {
            self.push(lr - hr);
        }
    }

    pub fn push(&mut self, r: f64) {
        self.n += 1;
        let d = r - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (r - self.mean);
    }

    pub fn merge(&mut self, other: &ScaleEstimator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Population variance of everything pushed so far.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }

    pub fn finish(&self) -> Result<ScaleFactor> {
        if self.n == 0 {
            return Err(Error::Degenerate("no samples to estimate the scale factor from".into()));
        }
        let v = self.variance();
        if v.is_nan() || v <= 0.0 {
            return Err(Error::Degenerate(
                "residual x_lr - x_hr has zero variance; cannot estimate a scale factor".into(),
            ));
        }
        ScaleFactor::new(1.0 / v.sqrt())
    }
}

/// `s = 1/√Var(x_lr − x_hr)` pooled over every sample of every pair.
///
/// ```
/// use wavebridge::bridge::{estimate_scale, WaveformPair};
///
/// let hr = vec![0.0; 8];
/// let lr: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 / 12.0 } else { -1.0 / 12.0 }).collect();
/// let pair = WaveformPair::new(hr, lr, 48000.0, 16000.0, 8000.0).unwrap();
/// let s = estimate_scale([&pair]).unwrap();
/// assert!((s.get() - 12.0).abs() < 1e-12);
/// ```
pub fn estimate_scale<'a>(pairs: impl IntoIterator<Item = &'a WaveformPair>) -> Result<ScaleFactor> {
    let mut est = ScaleEstimator::new();
    for p in pairs {
        est.push_pair(p);
    }
    est.finish()
}

/// A draw from the bridge marginal at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSample {
    pub x_t: Vec<f64>,
    pub t: f64,
    pub x0_scaled: Vec<f64>,
    pub x_end_scaled: Vec<f64>,
}

/// `x_t = a_t·x0 + b_t·x_T + c_t·ε` for already-scaled endpoints and a given
/// noise vector.
pub fn marginal_with_noise(
    sched: &ScheduleParams,
    t: f64,
    x0: &[f64],
    x_end: &[f64],
    eps: &[f64],
) -> Result<Vec<f64>> {
    check_len(x0.len(), x_end.len())?;
    check_len(x0.len(), eps.len())?;
    let c = sched.coefficients(t)?;
    Ok(x0
        .iter()
        .zip(x_end)
        .zip(eps)
        .map(|((&p, &q), &e)| c.a_t * p + c.b_t * q + c.c_t * e)
        .collect())
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Scales both endpoints of `pair` by `s` and samples the marginal at `t`.
pub fn sample_marginal<R: Rng + ?Sized>(
    pair: &WaveformPair,
    s: ScaleFactor,
    t: f64,
    sched: &ScheduleParams,
    rng: &mut R,
) -> Result<BridgeSample> {
    let x0 = s.apply(&pair.x_hr);
    let x_end = s.apply(&pair.x_lr);
    let eps = standard_normal(rng, x0.len());
    let x_t = marginal_with_noise(sched, t, &x0, &x_end, &eps)?;
    Ok(BridgeSample {
        x_t,
        t,
        x0_scaled: x0,
        x_end_scaled: x_end,
    })
}

/// Mean squared error between a prediction and the scaled target.
pub fn bridge_loss(pred_x0: &[f64], x0_scaled: &[f64]) -> Result<f64> {
    check_len(pred_x0.len(), x0_scaled.len())?;
    if pred_x0.is_empty() {
        return Err(Error::invalid("empty prediction"));
    }
    Ok(pred_x0.iter().zip(x0_scaled).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / pred_x0.len() as f64)
}

/// Per-term values of a training loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub bridge: f64,
    pub mag: f64,
    pub phase: f64,
    pub total: f64,
}

impl LossTerms {
    fn add_scaled(&mut self, o: &LossTerms, k: f64) {
        self.bridge += k * o.bridge;
        self.mag += k * o.mag;
        self.phase += k * o.phase;
        self.total += k * o.total;
    }
}

/// Loss graph for one item: given the prediction node and the scaled target,
/// records a scalar loss node and reports its terms.
pub trait ItemLoss {
    fn record(&self, tape: &mut Tape, pred: Var, x0_scaled: &[f64], s: ScaleFactor) -> Result<(Var, LossTerms)>;
}

/// Plain bridge regression loss.
#[derive(Debug, Clone, Copy, Default)]
pub struct BridgeObjective;

impl ItemLoss for BridgeObjective {
    fn record(&self, tape: &mut Tape, pred: Var, x0_scaled: &[f64], _s: ScaleFactor) -> Result<(Var, LossTerms)> {
        let target = tape.constant(Tensor::vector(x0_scaled.to_vec()));
        let loss = tape.mse(pred, target);
        let v = tape.value(loss).item();
        Ok((loss, LossTerms { bridge: v, total: v, ..Default::default() }))
    }
}

/// Result of one optimization step's forward and backward passes.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub terms: LossTerms,
    /// One gradient vector per parameter tensor, averaged over the batch.
    pub grads: Vec<Vec<f64>>,
}

/// Bridge training step over a batch with the plain regression loss.
pub fn training_step<M: Trainable + ?Sized, R: Rng + ?Sized>(
    batch: &[WaveformPair],
    s: ScaleFactor,
    sched: &ScheduleParams,
    t_min: f64,
    model: &M,
    rng: &mut R,
) -> Result<StepOutput> {
    training_step_with(batch, s, sched, t_min, model, &BridgeObjective, rng)
}

/// Training step with an arbitrary per-item loss. Items are processed one at
/// a time on separate tapes and their gradients averaged.
pub fn training_step_with<M: Trainable + ?Sized, L: ItemLoss + ?Sized, R: Rng + ?Sized>(
    batch: &[WaveformPair],
    s: ScaleFactor,
    sched: &ScheduleParams,
    t_min: f64,
    model: &M,
    loss: &L,
    rng: &mut R,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if !(t_min > 0.0 && t_min < 1.0) {
        return Err(Error::invalid(format!("t_min {t_min} must lie in (0, 1)")));
    }
    let k = 1.0 / batch.len() as f64;
    let shapes = model.param_lens();
    let mut grads: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
    let mut terms = LossTerms::default();
    for pair in batch {
        let t = rng.random_range(t_min..=1.0);
        let sample = sample_marginal(pair, s, t, sched, rng)?;
        let mut tape = Tape::new();
        let params = model.leaves(&mut tape);
        let pred = model.record(&mut tape, &params, &sample.x_t, t, &sample.x_end_scaled)?;
        let (node, item) = loss.record(&mut tape, pred, &sample.x0_scaled, s)?;
        if !item.total.is_finite() {
            let norm = sample.x_t.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::Numeric(format!(
                "non-finite loss at t = {t:.6} (|x_t| = {norm:.4e})"
            )));
        }
        let g = tape.backward(node)?;
        for (acc, (&p, &n)) in grads.iter_mut().zip(params.iter().zip(&shapes)) {
            for (a, v) in acc.iter_mut().zip(g.get_or_zeros(p, n)) {
                *a += k * v;
            }
        }
        terms.add_scaled(&item, k);
    }
    Ok(StepOutput { terms, grads })
}
