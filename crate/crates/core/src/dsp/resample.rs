//! Arbitrary-ratio band-limited resampling with a Kaiser-windowed sinc kernel.
//!
//! The kernel is tabulated once per call at `TABLE_DENSITY` points per zero
//! crossing and read back with linear interpolation, which is the usual
//! polyphase trick for ratios that are not small rationals.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const ZERO_CROSSINGS: usize = 32;
const TABLE_DENSITY: usize = 512;
const KAISER_BETA: f64 = 8.6;
/// Passband edge as a fraction of the lower of the two Nyquist rates.
const ROLLOFF: f64 = 0.92;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Windowed sinc sampled on `[0, ZERO_CROSSINGS]` in zero-crossing units.
fn kernel_table() -> Vec<f64> {
    let n = ZERO_CROSSINGS * TABLE_DENSITY;
    let norm = bessel_i0(KAISER_BETA);
    (0..=n + 1)
        .map(|i| {
            let u = i as f64 / TABLE_DENSITY as f64;
            if u >= ZERO_CROSSINGS as f64 {
                return 0.0;
            }
            let sinc = if i == 0 { 1.0 } else { (PI * u).sin() / (PI * u) };
            let r = u / ZERO_CROSSINGS as f64;
            sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
        })
        .collect()
}

/// Resamples `x` from `from` Hz to `to` Hz, producing exactly `out_len`
/// samples. Output sample `n` sits at input position `n·from/to`; samples
/// outside the input are treated as zero.
pub(crate) fn resample_to_len(x: &[f64], from: f64, to: f64, out_len: usize) -> Result<Vec<f64>> {
    if !(from > 0.0 && to > 0.0 && from.is_finite() && to.is_finite()) {
        return Err(Error::invalid(format!("invalid resampling rates {from} -> {to}")));
    }
    if from == to && out_len == x.len() {
        return Ok(x.to_vec());
    }
    let table = kernel_table();
    // cutoff as a fraction of the input rate's Nyquist
    let cut = ROLLOFF * (to / from).min(1.0);
    let half_width = ZERO_CROSSINGS as f64 / cut;
    let step = from / to;
    let out = (0..out_len)
        .map(|n| {
            let pos = n as f64 * step;
            let lo = (pos - half_width).ceil().max(0.0) as usize;
            let hi = ((pos + half_width).floor() as isize).min(x.len() as isize - 1);
            if hi < lo as isize {
                return 0.0;
            }
            let mut acc = 0.0;
            for (k, &v) in x.iter().enumerate().take(hi as usize + 1).skip(lo) {
                let u = (pos - k as f64).abs() * cut * TABLE_DENSITY as f64;
                let i = u as usize;
                let frac = u - i as f64;
                acc += v * (table[i] + frac * (table[i + 1] - table[i]));
            }
            acc * cut
        })
        .collect();
    Ok(out)
}

/// Resamples `x` from `from` Hz to `to` Hz. The output has
/// `ceil(len·to/from)` samples.
///
/// ```
/// let x: Vec<f64> = (0..4800).map(|i| (i as f64 * 0.05).sin()).collect();
/// let y = wavebridge::dsp::resample(&x, 48000.0, 16000.0).unwrap();
/// assert_eq!(y.len(), 1600);
/// ```
pub fn resample(x: &[f64], from: f64, to: f64) -> Result<Vec<f64>> {
    let out_len = (x.len() as f64 * to / from - 1e-9).ceil().max(0.0) as usize;
    resample_to_len(x, from, to, out_len)
}
