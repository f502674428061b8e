//! Short-time Fourier transform with a periodic Hann window and reflect
//! padding of `fft_size / 2` on both ends (frames are centered on `k·hop`).

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
}

impl StftConfig {
    /// Hann-windowed analysis with 75% overlap.
    pub fn new(fft_size: usize) -> Result<Self> {
        if fft_size < 4 || !fft_size.is_multiple_of(4) {
            return Err(Error::invalid(format!("fft size {fft_size} must be a positive multiple of 4")));
        }
        Ok(StftConfig { fft_size, hop: fft_size / 4 })
    }

    /// The configuration used by all metrics: 2048-point frames, hop 512.
    pub fn metrics() -> Self {
        StftConfig { fft_size: 2048, hop: 512 }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.fft_size / 2
    }
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn num_frames(len: usize, cfg: &StftConfig) -> usize {
    1 + len / cfg.hop
}

/// Complex spectrogram, row-major `[frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, f: usize) -> &[Complex64] {
        &self.data[f * self.bins..(f + 1) * self.bins]
    }

    /// `|X|²` per cell.
    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }
}

fn reflect_index(j: usize, pad: usize, len: usize) -> usize {
    if j < pad {
        pad - j
    } else if j < pad + len {
        j - pad
    } else {
        2 * (len - 1) - (j - pad)
    }
}

pub(crate) fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    (0..x.len() + 2 * pad).map(|j| x[reflect_index(j, pad, x.len())]).collect()
}

pub(crate) fn reflect_pad_adjoint(gp: &[f64], len: usize, pad: usize) -> Vec<f64> {
    let mut g = vec![0.0; len];
    for (j, &v) in gp.iter().enumerate() {
        g[reflect_index(j, pad, len)] += v;
    }
    g
}

pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    if x.len() < cfg.fft_size {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than the {}-point frame",
            x.len(),
            cfg.fft_size
        )));
    }
    let n = cfg.fft_size;
    let bins = cfg.bins();
    let frames = num_frames(x.len(), cfg);
    let padded = reflect_pad(x, cfg.pad());
    let window = hann_window(n);
    let plan = fft::forward(n);
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..frames {
        let seg = &padded[f * cfg.hop..f * cfg.hop + n];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(s * w, 0.0);
        }
        plan.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram { frames, bins, data })
}

/// Inverse of [`stft`] by windowed overlap-add with squared-window
/// normalization. `len` is the length of the original signal.
pub fn istft(spec: &Spectrogram, cfg: &StftConfig, len: usize) -> Result<Vec<f64>> {
    let n = cfg.fft_size;
    if spec.bins != cfg.bins() || spec.data.len() != spec.frames * spec.bins {
        return Err(Error::invalid(format!(
            "spectrogram has {} bins, expected {}",
            spec.bins,
            cfg.bins()
        )));
    }
    if spec.frames != num_frames(len, cfg) {
        return Err(Error::invalid(format!(
            "{} frames cannot reconstruct {len} samples (expected {})",
            spec.frames,
            num_frames(len, cfg)
        )));
    }
    let pad = cfg.pad();
    let window = hann_window(n);
    let mut out = vec![0.0; len + 2 * pad];
    let mut norm = vec![0.0; len + 2 * pad];
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..spec.frames {
        let half = spec.frame(f);
        full[..spec.bins].copy_from_slice(half);
        for k in spec.bins..n {
            full[k] = half[n - k].conj();
        }
        let frame = fft::real_inverse(full.clone());
        let start = f * cfg.hop;
        for (i, (&v, &w)) in frame.iter().zip(&window).enumerate() {
            if start + i < out.len() {
                out[start + i] += v * w;
                norm[start + i] += w * w;
            }
        }
    }
    Ok(out[pad..pad + len]
        .iter()
        .zip(&norm[pad..pad + len])
        .map(|(&v, &w)| if w > 1e-11 { v / w } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_signal_has_zero_spectrum() {
        let s = stft(&vec![0.0; 4096], &StftConfig::metrics()).unwrap();
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let x: Vec<f64> = (0..48000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 48000.0).sin())
            .collect();
        let s = stft(&x, &StftConfig::metrics()).unwrap();
        for f in 2..s.frames - 2 {
            let frame = s.frame(f);
            let argmax = (0..s.bins).max_by(|&a, &b| frame[a].norm().total_cmp(&frame[b].norm())).unwrap();
            assert_eq!(argmax, 43);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let x = noise(8192, 1);
        let cfg = StftConfig::new(1024).unwrap();
        let s = stft(&x, &cfg).unwrap();
        let padded = reflect_pad(&x, cfg.pad());
        let w = hann_window(cfg.fft_size);
        let n = cfg.fft_size;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for f in 0..s.frames {
            for (k, c) in s.frame(f).iter().enumerate() {
                let weight = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                lhs += weight * c.norm_sqr() / n as f64;
            }
            rhs += padded[f * cfg.hop..f * cfg.hop + n]
                .iter()
                .zip(&w)
                .map(|(v, w)| (v * w).powi(2))
                .sum::<f64>();
        }
        assert!((lhs - rhs).abs() < 1e-6 * rhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn round_trip_white_noise() {
        let x = noise(48000, 2);
        let cfg = StftConfig::metrics();
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg, x.len()).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn round_trip_constant_and_zero() {
        let cfg = StftConfig::new(512).unwrap();
        let x = vec![0.37; 5000];
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg, x.len()).unwrap();
        assert!(y.iter().all(|v| (v - 0.37).abs() < 1e-6));
        let zero = Spectrogram {
            frames: num_frames(5000, &cfg),
            bins: cfg.bins(),
            data: vec![Complex64::new(0.0, 0.0); num_frames(5000, &cfg) * cfg.bins()],
        };
        assert!(istft(&zero, &cfg, 5000).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let cfg = StftConfig::metrics();
        assert!(stft(&[0.0; 100], &cfg).is_err());
        let s = stft(&vec![0.1; 4096], &cfg).unwrap();
        assert!(istft(&s, &cfg, 9000).is_err());
        assert!(istft(&s, &StftConfig::new(1024).unwrap(), 4096).is_err());
        assert!(StftConfig::new(1022).is_err());
    }
}
