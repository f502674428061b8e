//! A-weighting curve and a linear-phase FIR approximation of it.

use super::{fft, hann_window};

pub const A_WEIGHTING_TAPS: usize = 255;
const DESIGN_FFT: usize = 8192;

/// A-weighting gain in dB, normalized to 0 dB at 1 kHz.
pub fn a_weighting_db(freq: f64) -> f64 {
    if freq <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let f2 = freq * freq;
    let ra = 12194f64.powi(2) * f2 * f2
        / ((f2 + 20.6f64.powi(2))
            * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt()
            * (f2 + 12194f64.powi(2)));
    20.0 * ra.log10() + 2.0
}

fn gain_at(taps: &[f64], freq: f64, rate: f64) -> f64 {
    let center = (taps.len() / 2) as f64;
    let w = 2.0 * std::f64::consts::PI * freq / rate;
    // symmetric taps: the response is real after removing the linear phase
    taps.iter().enumerate().map(|(i, &h)| h * (w * (i as f64 - center)).cos()).sum()
}

/// Zero-phase (odd-length, symmetric) FIR whose magnitude follows the
/// A-weighting curve at `rate`, with unit gain at 1 kHz.
pub fn a_weighting_fir(rate: f64) -> Vec<f64> {
    let n = DESIGN_FFT;
    let spec: Vec<_> = (0..n)
        .map(|k| {
            let f = k.min(n - k) as f64 * rate / n as f64;
            let g = if f == 0.0 { 0.0 } else { 10f64.powf(a_weighting_db(f) / 20.0) };
            rustfft::num_complex::Complex64::new(g, 0.0)
        })
        .collect();
    let impulse = fft::real_inverse(spec);
    let half = A_WEIGHTING_TAPS / 2;
    let window = hann_window(A_WEIGHTING_TAPS + 1);
    let mut taps: Vec<f64> = (0..A_WEIGHTING_TAPS)
        .map(|i| {
            let lag = (i as isize - half as isize).rem_euclid(n as isize) as usize;
            // periodic window of length taps+1, shifted so its peak is centered
            impulse[lag] * window[i + 1]
        })
        .collect();
    let g = gain_at(&taps, 1000.0, rate);
    taps.iter_mut().for_each(|t| *t /= g);
    taps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_reference_points() {
        // IEC 61672 table values
        assert!(a_weighting_db(1000.0).abs() < 0.01);
        assert!((a_weighting_db(100.0) + 19.1).abs() < 0.1);
        assert!((a_weighting_db(10000.0) + 2.5).abs() < 0.1);
        assert!((a_weighting_db(2500.0) - 1.3).abs() < 0.1);
    }

    #[test]
    fn fir_is_symmetric_and_unit_at_1k() {
        let h = a_weighting_fir(48000.0);
        assert_eq!(h.len(), A_WEIGHTING_TAPS);
        for i in 0..h.len() {
            assert!((h[i] - h[h.len() - 1 - i]).abs() < 1e-12);
        }
        assert!((gain_at(&h, 1000.0, 48000.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fir_tracks_curve_in_mid_band() {
        let h = a_weighting_fir(48000.0);
        for f in [500.0, 2000.0, 4000.0, 8000.0] {
            let got = 20.0 * gain_at(&h, f, 48000.0).abs().log10();
            assert!((got - a_weighting_db(f)).abs() < 1.0, "{f} Hz: {got} vs {}", a_weighting_db(f));
        }
        // 255 taps cannot resolve the steep rise below ~200 Hz; DC is still
        // attenuated by more than 14 dB
        assert!(gain_at(&h, 0.0, 48000.0).abs() < 0.2);
    }
}
