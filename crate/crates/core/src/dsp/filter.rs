//! IIR low-pass filters as cascades of second-order sections.
//!
//! Analog Butterworth and Chebyshev type-I prototypes are mapped to the
//! digital domain with the bilinear transform, prewarped so the cutoff lands
//! exactly on the requested frequency. Only even orders are supported, so
//! every section is a conjugate pole pair.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Transposed direct-form II biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Low-pass section from the analog prototype `a0 / (s² + a1·s + a0)`.
    fn from_analog_lowpass(a1: f64, a0: f64, rate: f64) -> Self {
        let c = 2.0 * rate;
        let d0 = c * c + a1 * c + a0;
        Biquad {
            b0: a0 / d0,
            b1: 2.0 * a0 / d0,
            b2: a0 / d0,
            a1: (2.0 * a0 - 2.0 * c * c) / d0,
            a2: (c * c - a1 * c + a0) / d0,
        }
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let (mut s1, mut s2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b0 * v + s1;
                s1 = self.b1 * v - self.a1 * y + s2;
                s2 = self.b2 * v - self.a2 * y;
                y
            })
            .collect()
    }

    /// `|H(e^{iω})|` at frequency `freq`.
    pub fn magnitude(&self, freq: f64, rate: f64) -> f64 {
        let w = 2.0 * PI * freq / rate;
        let z1 = rustfft::num_complex::Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b0 + z1 * self.b1 + z2 * self.b2;
        let den = 1.0 + z1 * self.a1 + z2 * self.a2;
        (num / den).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
    gain: f64,
}

fn check_design(order: usize, cutoff: f64, rate: f64) -> Result<()> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::invalid(format!("filter order must be even and positive, got {order}")));
    }
    if !(cutoff > 0.0 && cutoff < rate / 2.0) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff} Hz must lie strictly inside (0, {}) Hz",
            rate / 2.0
        )));
    }
    Ok(())
}

impl BiquadCascade {
    /// Butterworth low-pass, `-3 dB` at `cutoff`.
    pub fn butterworth(order: usize, cutoff: f64, rate: f64) -> Result<Self> {
        check_design(order, cutoff, rate)?;
        let wa = 2.0 * rate * (PI * cutoff / rate).tan();
        let sections = (0..order / 2)
            .map(|k| {
                let theta = PI * (2 * k + 1) as f64 / (2 * order) as f64;
                // pole pair -sin θ ± i cos θ on the unit circle
                let a1 = 2.0 * theta.sin() * wa;
                Biquad::from_analog_lowpass(a1, wa * wa, rate)
            })
            .collect();
        Ok(BiquadCascade { sections, gain: 1.0 })
    }

    /// Chebyshev type-I low-pass with `ripple_db` passband ripple; the
    /// response equals the ripple floor at `cutoff`.
    pub fn chebyshev1(order: usize, ripple_db: f64, cutoff: f64, rate: f64) -> Result<Self> {
        check_design(order, cutoff, rate)?;
        if ripple_db.is_nan() || ripple_db <= 0.0 {
            return Err(Error::invalid(format!("ripple must be positive, got {ripple_db} dB")));
        }
        let wa = 2.0 * rate * (PI * cutoff / rate).tan();
        let eps = (10f64.powf(ripple_db / 10.0) - 1.0).sqrt();
        let mu = (1.0 / eps).asinh() / order as f64;
        let sections = (0..order / 2)
            .map(|k| {
                let theta = PI * (2 * k + 1) as f64 / (2 * order) as f64;
                let re = -mu.sinh() * theta.sin();
                let im = mu.cosh() * theta.cos();
                let a1 = -2.0 * re * wa;
                let a0 = (re * re + im * im) * wa * wa;
                Biquad::from_analog_lowpass(a1, a0, rate)
            })
            .collect();
        // even orders sit at the bottom of the ripple at DC
        Ok(BiquadCascade {
            sections,
            gain: 10f64.powf(-ripple_db / 20.0),
        })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Causal filtering from a zero initial state.
    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| v * self.gain).collect();
        for s in &self.sections {
            y = s.process(&y);
        }
        y
    }

    pub fn magnitude(&self, freq: f64, rate: f64) -> f64 {
        self.gain * self.sections.iter().map(|s| s.magnitude(freq, rate)).product::<f64>()
    }
}
