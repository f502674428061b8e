//! Reverse-time samplers: first-order probability-flow ODE, first-order
//! posterior SDE and a two-evaluation Heun-style SDE.
//!
//! Sampling starts at `x = s·x_lr` at the largest grid time and steps down the
//! grid; the state at the last grid time, divided by `s`, is the output. No
//! denoiser call happens after the last step, so the number of evaluations is
//! `(len − 1)` for `Ode1`/`Sde1` and `2·(len − 1)` for `Sde2`.
//!
//! ```
//! use wavebridge::bridge::ScaleFactor;
//! use wavebridge::denoiser::{AnalyticGaussianDenoiser, CountingDenoiser};
//! use wavebridge::sampler::{sample, InferenceGrid, ZeroNoise};
//! use wavebridge::schedule::ScheduleParams;
//!
//! let sched = ScheduleParams::gmax();
//! let d = CountingDenoiser::new(AnalyticGaussianDenoiser::new(1.0, sched).unwrap());
//! let grid = InferenceGrid::preset(2).unwrap();
//! let out = sample(&d, &[0.1, -0.2], ScaleFactor::unit(), &grid, &sched, &mut ZeroNoise).unwrap();
//! assert_eq!(d.calls(), 2);
//! assert_eq!(out.len(), 2);
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bridge::ScaleFactor;
use crate::denoiser::Denoiser;
use crate::error::{check_len, Error, Result};
use crate::schedule::{BridgeCoefficients, ScheduleParams};

/// Lower end of the linear inference grid.
pub const DEFAULT_T_MIN: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ode1,
    Sde1,
    Sde2,
}

impl SamplerKind {
    pub fn evals_per_interval(self) -> usize {
        match self {
            SamplerKind::Ode1 | SamplerKind::Sde1 => 1,
            SamplerKind::Sde2 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ode1 => "ode1",
            SamplerKind::Sde1 => "sde1",
            SamplerKind::Sde2 => "sde2",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ode1" => Ok(SamplerKind::Ode1),
            "sde1" => Ok(SamplerKind::Sde1),
            "sde2" => Ok(SamplerKind::Sde2),
            other => Err(Error::invalid(format!("unknown sampler `{other}`"))),
        }
    }
}

/// `n_points` equally spaced times from `t_max` down to `t_min`.
pub fn linear_grid(n_points: usize, t_min: f64, t_max: f64) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::invalid(format!("a grid needs at least 2 points, got {n_points}")));
    }
    if !(t_min > 0.0 && t_min < t_max && t_max <= 1.0) {
        return Err(Error::invalid(format!(
            "grid bounds must satisfy 0 < t_min < t_max <= 1 (t_min={t_min}, t_max={t_max})"
        )));
    }
    let h = (t_max - t_min) / (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| if i == n_points - 1 { t_min } else { t_max - i as f64 * h })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceGrid {
    times: Vec<f64>,
    kind: SamplerKind,
}

impl InferenceGrid {
    pub fn new(times: Vec<f64>, kind: SamplerKind) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("a grid needs at least 2 points"));
        }
        if times.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::invalid(format!("grid times must lie in (0, 1]: {times:?}")));
        }
        if times.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(format!("grid must be strictly descending: {times:?}")));
        }
        Ok(InferenceGrid { times, kind })
    }

    /// Linear grid with `steps` intervals between `t_min` and 1.
    pub fn linear(steps: usize, t_min: f64, kind: SamplerKind) -> Result<Self> {
        Self::new(linear_grid(steps + 1, t_min, 1.0)?, kind)
    }

    /// The few-step schedules: 4 evaluations use `Sde2` on `{1, 0.5, 0.08}`,
    /// 2 and 1 evaluations use `Ode1` on `{1, 0.9, 0.03}` and `{1, 0.04}`.
    pub fn preset(nfe: usize) -> Result<Self> {
        match nfe {
            4 => Self::new(vec![1.0, 0.5, 0.08], SamplerKind::Sde2),
            2 => Self::new(vec![1.0, 0.9, 0.03], SamplerKind::Ode1),
            1 => Self::new(vec![1.0, 0.04], SamplerKind::Ode1),
            other => Err(Error::invalid(format!("no preset grid for {other} evaluations (use 1, 2 or 4)"))),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn nfe(&self) -> usize {
        (self.times.len() - 1) * self.kind.evals_per_interval()
    }
}

/// Source of standard normal draws for the SDE samplers.
pub trait Noise {
    fn fill(&mut self, out: &mut [f64]);
}

/// Independent `N(0, 1)` draws from a seeded generator.
#[derive(Debug, Clone)]
pub struct Gaussian<R>(pub R);

impl<R: Rng> Noise for Gaussian<R> {
    fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.0.sample(StandardNormal);
        }
    }
}

/// All-zero "noise": turns the SDE samplers into their mean recursions.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl Noise for ZeroNoise {
    fn fill(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}

fn check_times(t: f64, s: f64) -> Result<()> {
    if s.is_nan() || t.is_nan() || s >= t {
        return Err(Error::invalid(format!("step target {s} must be below current time {t}")));
    }
    Ok(())
}

/// Weights `(x_t, x0_hat, x_T)` of the ODE update from `ct` to `cs`.
pub fn ode_coefficients(ct: &BridgeCoefficients, cs: &BridgeCoefficients) -> (f64, f64, f64) {
    // at t = 1 the state equals x_T and the residual x_t − μ_t vanishes
    let ratio = if ct.c_t == 0.0 { 0.0 } else { cs.c_t / ct.c_t };
    (ratio, cs.a_t - ratio * ct.a_t, cs.b_t - ratio * ct.b_t)
}

/// Weights `(x_t, x0_hat, ε)` of the posterior SDE update from `ct` to `cs`.
pub fn sde_coefficients(ct: &BridgeCoefficients, cs: &BridgeCoefficients) -> (f64, f64, f64) {
    let r = cs.sigma2_t / ct.sigma2_t;
    let alpha = cs.alpha_t;
    (
        alpha * r / ct.alpha_t,
        alpha * (1.0 - r),
        alpha * cs.sigma_t() * (1.0 - r).max(0.0).sqrt(),
    )
}

pub fn ode_step(
    x_t: &[f64],
    x0_hat: &[f64],
    x_end: &[f64],
    ct: &BridgeCoefficients,
    cs: &BridgeCoefficients,
) -> Result<Vec<f64>> {
    check_times(ct.t, cs.t)?;
    check_len(x_t.len(), x0_hat.len())?;
    check_len(x_t.len(), x_end.len())?;
    let (kx, k0, ke) = ode_coefficients(ct, cs);
    Ok(x_t
        .iter()
        .zip(x0_hat)
        .zip(x_end)
        .map(|((&x, &p), &e)| kx * x + k0 * p + ke * e)
        .collect())
}

pub fn sde_step(
    x_t: &[f64],
    x0_hat: &[f64],
    eps: &[f64],
    ct: &BridgeCoefficients,
    cs: &BridgeCoefficients,
) -> Result<Vec<f64>> {
    check_times(ct.t, cs.t)?;
    check_len(x_t.len(), x0_hat.len())?;
    check_len(x_t.len(), eps.len())?;
    let (kx, k0, kn) = sde_coefficients(ct, cs);
    Ok(x_t
        .iter()
        .zip(x0_hat)
        .zip(eps)
        .map(|((&x, &p), &e)| kx * x + k0 * p + kn * e)
        .collect())
}

/// Heun-style step: an SDE predictor to `s`, then the same step from `x_t`
/// repeated with the average of the two `x0` predictions and the same noise.
#[allow(clippy::too_many_arguments)]
pub fn sde2_step<D: Denoiser + ?Sized>(
    x_t: &[f64],
    x0_hat: &[f64],
    x_end: &[f64],
    eps: &[f64],
    denoiser: &D,
    ct: &BridgeCoefficients,
    cs: &BridgeCoefficients,
) -> Result<Vec<f64>> {
    let predicted = sde_step(x_t, x0_hat, eps, ct, cs)?;
    let second = denoiser.predict(&predicted, cs.t, x_end)?;
    check_len(second.len(), x0_hat.len())?;
    let avg: Vec<f64> = x0_hat.iter().zip(&second).map(|(a, b)| 0.5 * (a + b)).collect();
    sde_step(x_t, &avg, eps, ct, cs)
}

/// Runs the sampler of `grid` from the scaled observation and returns the
/// unscaled estimate of the high-resolution signal.
pub fn sample<D: Denoiser + ?Sized, N: Noise + ?Sized>(
    denoiser: &D,
    x_lr: &[f64],
    s: ScaleFactor,
    grid: &InferenceGrid,
    sched: &ScheduleParams,
    noise: &mut N,
) -> Result<Vec<f64>> {
    let x_end = s.apply(x_lr);
    let mut x = x_end.clone();
    let mut eps = vec![0.0; x.len()];
    let times = grid.times();
    let mut ct = sched.coefficients(times[0])?;
    for (i, &next) in times[1..].iter().enumerate() {
        let cs = sched.coefficients(next)?;
        let x0_hat = denoiser.predict(&x, ct.t, &x_end)?;
        check_len(x0_hat.len(), x.len())?;
        x = match grid.kind() {
            SamplerKind::Ode1 => ode_step(&x, &x0_hat, &x_end, &ct, &cs)?,
            SamplerKind::Sde1 => {
                noise.fill(&mut eps);
                sde_step(&x, &x0_hat, &eps, &ct, &cs)?
            }
            SamplerKind::Sde2 => {
                noise.fill(&mut eps);
                sde2_step(&x, &x0_hat, &x_end, &eps, denoiser, &ct, &cs)?
            }
        };
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite state at sample {j} after step {i} (t = {} -> {next})",
                ct.t
            )));
        }
        ct = cs;
    }
    Ok(s.remove(&x))
}
