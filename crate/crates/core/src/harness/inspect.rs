//! Schedule inspection: coefficient table and low-band energy of the mean
//! trajectory, for the configured bridge and a VP diffusion reference.
//!
//! The bridge mean `a_t·x0 + b_t·x_T` keeps the band below the cutoff when
//! `x_T` is a brickwall low-pass of `x0` and `a_t + b_t = 1`. The diffusion
//! mean `α_t·x0` shrinks it towards zero.

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::corpus::{item_rng, synth_item};
use crate::dsp::brickwall_lowpass;
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;

/// Grid points of the default table.
pub const INSPECT_POINTS: usize = 1001;
/// Cutoff used when the configuration does not fix an input rate.
pub const DEFAULT_INSPECT_CUTOFF: f64 = 8000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub t: f64,
    pub a_t: f64,
    pub b_t: f64,
    pub c_t: f64,
    pub sigma2_t: f64,
    pub sigma_bar2_t: f64,
    /// Low-band energy of the bridge mean, relative to `t = 0`.
    pub lf_energy_bridge: f64,
    /// Low-band energy of the VP diffusion mean, relative to `t = 0`.
    pub lf_energy_diffusion: f64,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Table over `points` equally spaced times in `[0, 1]`, using synthetic
/// item 0 of `cfg.seed` as `x0`.
pub fn inspect_schedule(cfg: &Config, points: usize) -> Result<Vec<ScheduleRow>> {
    let sched = cfg.schedule.params()?;
    let reference = ScheduleParams::vp();
    let rate = cfg.data.target_rate as f64;
    let cutoff = cfg.data.input_rate.map_or(DEFAULT_INSPECT_CUTOFF, |r| r / 2.0);
    let x0 = synth_item(&mut item_rng(cfg.seed, 0), &cfg.data, cfg.item_len());
    let x_end = brickwall_lowpass(&x0, cutoff, rate);
    let low0 = brickwall_lowpass(&x0, cutoff, rate);
    let low_end = brickwall_lowpass(&x_end, cutoff, rate);
    let e0 = energy(&low0);
    if points < 2 {
        return Err(Error::invalid(format!("need at least 2 grid points, got {points}")));
    }
    (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            let c = sched.coefficients(t)?;
            // the band projection is linear, so project the endpoints once
            let mean: Vec<f64> = low0.iter().zip(&low_end).map(|(p, q)| c.a_t * p + c.b_t * q).collect();
            let alpha = reference.coefficients(t)?.alpha_t;
            Ok(ScheduleRow {
                t,
                a_t: c.a_t,
                b_t: c.b_t,
                c_t: c.c_t,
                sigma2_t: c.sigma2_t,
                sigma_bar2_t: c.sigma_bar2_t,
                lf_energy_bridge: energy(&mean) / e0,
                lf_energy_diffusion: alpha * alpha,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> Config {
        let mut c = Config::default();
        c.data.duration_secs = 0.05;
        c
    }

    #[test]
    fn bridge_keeps_low_band_and_diffusion_loses_it() {
        let rows = inspect_schedule(&cfg(), INSPECT_POINTS).unwrap();
        assert_eq!(rows.len(), 1001);
        assert_eq!((rows[0].t, rows[1000].t), (0.0, 1.0));
        for r in &rows {
            assert!((r.a_t + r.b_t - 1.0).abs() < 1e-12);
            assert!((r.lf_energy_bridge - 1.0).abs() < 1e-10, "{r:?}");
        }
        assert_eq!(rows[0].lf_energy_diffusion, 1.0);
        // α₁² = exp(−(β₀ + β₁)/2) for the linear VP schedule
        let want = (-(0.01 + 20.0) / 2.0f64).exp();
        assert!((rows[1000].lf_energy_diffusion - want).abs() < 1e-12);
        assert!(rows[1000].lf_energy_diffusion < 0.01);
    }

    #[test]
    fn vp_bridge_mean_is_not_convex() {
        let mut c = cfg();
        c.schedule.kind = crate::schedule::ScheduleKind::Vp;
        let rows = inspect_schedule(&c, 11).unwrap();
        assert!(rows.iter().any(|r| (r.a_t + r.b_t - 1.0).abs() > 1e-3));
    }
}
