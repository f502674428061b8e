//! Evaluation metrics: log-spectral distance (full band and split at the
//! input cutoff), scale-invariant SNR, and SSIM between log-power
//! spectrograms.
//!
//! All spectral metrics use a 2048-point Hann STFT with hop 512. Powers are
//! floored at [`POWER_FLOOR`] before the logarithm.

use serde::{Deserialize, Serialize};

use crate::dsp::{stft, StftConfig};
use crate::error::{check_len, Error, Result};

pub const POWER_FLOOR: f64 = 1e-8;
/// SI-SNR of an exact reconstruction is reported as this value.
pub const SI_SNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Band {
    Full,
    /// Bins strictly below the cutoff bin.
    Low(f64),
    /// Bins at or above the cutoff bin.
    High(f64),
}

/// Bin index of `cutoff_hz`, rounded to nearest.
pub fn cutoff_bin(cutoff_hz: f64, cfg: &StftConfig, rate: f64) -> usize {
    (cutoff_hz * cfg.fft_size as f64 / rate).round() as usize
}

fn log_power(x: &[f64], cfg: &StftConfig) -> Result<(usize, usize, Vec<f64>)> {
    let s = stft(x, cfg)?;
    let lp = s.power().into_iter().map(|p| p.max(POWER_FLOOR).log10()).collect();
    Ok((s.frames, s.bins, lp))
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    check_len(pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    if pred.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("signal contains non-finite samples".into()));
    }
    Ok(())
}

/// Log-spectral distance over `band`, averaged across frames.
pub fn lsd(pred: &[f64], target: &[f64], cfg: &StftConfig, band: Band, rate: f64) -> Result<f64> {
    check_pair(pred, target)?;
    if let Band::Low(fc) | Band::High(fc) = band {
        if !(fc > 0.0 && fc <= rate / 2.0) {
            return Err(Error::invalid(format!("cutoff {fc} Hz outside (0, {}] Hz", rate / 2.0)));
        }
    }
    let bins = cfg.bins();
    let range = match band {
        Band::Full => 0..bins,
        Band::Low(fc) => 0..cutoff_bin(fc, cfg, rate).min(bins),
        Band::High(fc) => cutoff_bin(fc, cfg, rate).min(bins)..bins,
    };
    if range.is_empty() {
        return Err(Error::invalid(format!("band {band:?} contains no bins")));
    }
    let (frames, bins, a) = log_power(pred, cfg)?;
    let (_, _, b) = log_power(target, cfg)?;
    let width = range.len() as f64;
    let total: f64 = (0..frames)
        .map(|f| {
            let row = f * bins;
            let ms: f64 = range.clone().map(|k| (a[row + k] - b[row + k]).powi(2)).sum::<f64>() / width;
            ms.sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

/// Scale-invariant SNR in dB: projects `pred` on `target` after removing
/// both means.
///
/// ```
/// use wavebridge::metrics::si_snr;
///
/// let x: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.05).sin()).collect();
/// let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
/// assert_eq!(si_snr(&y, &x).unwrap(), 100.0);
/// ```
pub fn si_snr(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let p: Vec<f64> = pred.iter().map(|v| v - mp).collect();
    let t: Vec<f64> = target.iter().map(|v| v - mt).collect();
    let tt: f64 = t.iter().map(|v| v * v).sum();
    if tt == 0.0 {
        return Err(Error::Degenerate("SI-SNR target has zero energy".into()));
    }
    let alpha = p.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / tt;
    let signal: f64 = t.iter().map(|v| (alpha * v).powi(2)).sum();
    let noise: f64 = p.iter().zip(&t).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    if noise <= signal * 1e-10 {
        return Ok(SI_SNR_CAP_DB);
    }
    if signal == 0.0 {
        return Err(Error::Degenerate("SI-SNR prediction is orthogonal to target".into()));
    }
    Ok((10.0 * (signal / noise).log10()).min(SI_SNR_CAP_DB))
}

/// Mean SSIM over all 7×7 windows of the two log-power spectrograms after
/// normalizing both with their joint minimum and maximum.
pub fn ssim_spec(pred: &[f64], target: &[f64], cfg: &StftConfig) -> Result<f64> {
    check_pair(pred, target)?;
    let (frames, bins, mut a) = log_power(pred, cfg)?;
    let (_, _, mut b) = log_power(target, cfg)?;
    if frames < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW} frames, got {frames}"
        )));
    }
    let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(&b).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(1.0);
    }
    let range = (hi - lo).max(1e-6);
    for v in a.iter_mut().chain(b.iter_mut()) {
        *v = (*v - lo) / range;
    }
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let w = SSIM_WINDOW;
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for f0 in 0..=frames - w {
        for k0 in 0..=bins - w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for f in f0..f0 + w {
                for k in k0..k0 + w {
                    let (x, y) = (a[f * bins + k], b[f * bins + k]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lsd: f64,
    pub lsd_lf: f64,
    pub lsd_hf: f64,
    pub si_snr: f64,
    pub ssim: f64,
    pub cutoff_hz: f64,
}

/// All metrics for one reconstruction; `cutoff_hz` splits the LSD bands.
pub fn evaluate_pair(pred: &[f64], target: &[f64], cutoff_hz: f64, rate: f64) -> Result<MetricsReport> {
    let cfg = StftConfig::metrics();
    Ok(MetricsReport {
        lsd: lsd(pred, target, &cfg, Band::Full, rate)?,
        lsd_lf: lsd(pred, target, &cfg, Band::Low(cutoff_hz), rate)?,
        lsd_hf: lsd(pred, target, &cfg, Band::High(cutoff_hz), rate)?,
        si_snr: si_snr(pred, target)?,
        ssim: ssim_spec(pred, target, &cfg)?,
        cutoff_hz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub lsd: f64,
    pub lsd_lf: f64,
    pub lsd_hf: f64,
    pub si_snr: f64,
    pub ssim: f64,
    pub n: usize,
}

/// Arithmetic mean of each metric.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to aggregate"));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(AggregateReport {
        lsd: mean(|r| r.lsd),
        lsd_lf: mean(|r| r.lsd_lf),
        lsd_hf: mean(|r| r.lsd_hf),
        si_snr: mean(|r| r.si_snr),
        ssim: mean(|r| r.ssim),
        n: reports.len(),
    })
}
