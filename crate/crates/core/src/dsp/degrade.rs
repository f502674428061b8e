//! Band-limiting degradation: low-pass, decimate to a lower rate, then
//! upsample back to the original rate and length.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::filter::BiquadCascade;
use super::resample::resample_to_len;
use super::{fft, AudioBuffer};
use crate::bridge::WaveformPair;
use crate::error::{Error, Result};

/// Passband ripple of the Chebyshev filters in the random menu.
pub const CHEBYSHEV_RIPPLE_DB: f64 = 0.05;
pub const MIN_INPUT_RATE: f64 = 6000.0;
pub const MAX_INPUT_RATE: f64 = 48000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterFamily {
    Butterworth,
    Chebyshev1,
    Brickwall,
}

impl FilterFamily {
    pub const ALL: [FilterFamily; 3] = [FilterFamily::Butterworth, FilterFamily::Chebyshev1, FilterFamily::Brickwall];

    pub fn name(self) -> &'static str {
        match self {
            FilterFamily::Butterworth => "butterworth",
            FilterFamily::Chebyshev1 => "chebyshev1",
            FilterFamily::Brickwall => "brickwall",
        }
    }
}

impl fmt::Display for FilterFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FilterFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "butterworth" => Ok(FilterFamily::Butterworth),
            "chebyshev1" => Ok(FilterFamily::Chebyshev1),
            "brickwall" => Ok(FilterFamily::Brickwall),
            other => Err(Error::invalid(format!("unknown filter family `{other}`"))),
        }
    }
}

/// One degradation: filter family and order, and the intermediate rate.
/// The cutoff is always the intermediate Nyquist frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub family: FilterFamily,
    /// Even, 2 to 10; ignored for brickwall.
    pub order: usize,
    pub input_rate: f64,
}

impl DegradationSpec {
    pub fn brickwall(input_rate: f64) -> Self {
        DegradationSpec {
            family: FilterFamily::Brickwall,
            order: 0,
            input_rate,
        }
    }

    /// Training-time draw: family uniform, order uniform over {2, 4, …, 10},
    /// input rate uniform on [6 kHz, 48 kHz].
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let family = FilterFamily::ALL[rng.random_range(0..3)];
        let order = 2 * rng.random_range(1..=5);
        let input_rate = rng.random_range(MIN_INPUT_RATE..=MAX_INPUT_RATE);
        DegradationSpec {
            family,
            order,
            input_rate,
        }
    }

    pub fn cutoff_hz(&self) -> f64 {
        self.input_rate / 2.0
    }

    pub fn validate(&self, target_rate: f64) -> Result<()> {
        if !(self.input_rate > 0.0 && self.input_rate.is_finite()) {
            return Err(Error::invalid(format!("input rate {} must be positive", self.input_rate)));
        }
        if self.input_rate > target_rate * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "input rate {} exceeds target rate {target_rate}",
                self.input_rate
            )));
        }
        let bad_order = !(2..=10).contains(&self.order) || !self.order.is_multiple_of(2);
        if self.family != FilterFamily::Brickwall && bad_order {
            return Err(Error::invalid(format!(
                "{} order must be even in 2..=10, got {}",
                self.family, self.order
            )));
        }
        Ok(())
    }
}

/// Zero-phase ideal low-pass: zeroes every DFT bin above `cutoff_hz`.
pub fn brickwall_lowpass(x: &[f64], cutoff_hz: f64, rate: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 || cutoff_hz >= rate / 2.0 {
        return x.to_vec();
    }
    let mut spec = fft::real_spectrum(x);
    for (k, c) in spec.iter_mut().enumerate() {
        let bin = k.min(n - k) as f64;
        if bin * rate / n as f64 > cutoff_hz {
            *c = rustfft::num_complex::Complex64::new(0.0, 0.0);
        }
    }
    fft::real_inverse(spec)
}

fn same_rate(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * b
}

/// Applies `spec` to a high-resolution buffer and returns the aligned pair.
///
/// ```
/// use wavebridge::dsp::{degrade, AudioBuffer, DegradationSpec};
///
/// let hr = AudioBuffer::new((0..4800).map(|i| (i as f64 * 0.3).sin() * 0.5).collect(), 48000).unwrap();
/// let pair = degrade(&hr, &DegradationSpec::brickwall(16000.0)).unwrap();
/// assert_eq!(pair.x_lr.len(), pair.x_hr.len());
/// assert_eq!(pair.cutoff_hz, 8000.0);
/// ```
pub fn degrade(x_hr: &AudioBuffer, spec: &DegradationSpec) -> Result<WaveformPair> {
    let rate = x_hr.rate as f64;
    spec.validate(rate)?;
    let x = &x_hr.samples;
    let cutoff = spec.cutoff_hz();
    let x_lr = if same_rate(spec.input_rate, rate) {
        x.clone()
    } else {
        let filtered = match spec.family {
            FilterFamily::Brickwall => brickwall_lowpass(x, cutoff, rate),
            FilterFamily::Butterworth => BiquadCascade::butterworth(spec.order, cutoff, rate)?.process(x),
            FilterFamily::Chebyshev1 => {
                BiquadCascade::chebyshev1(spec.order, CHEBYSHEV_RIPPLE_DB, cutoff, rate)?.process(x)
            }
        };
        let low_len = (x.len() as f64 * spec.input_rate / rate).ceil() as usize;
        let low = resample_to_len(&filtered, rate, spec.input_rate, low_len)?;
        resample_to_len(&low, spec.input_rate, rate, x.len())?
    };
    WaveformPair::new(x.clone(), x_lr, rate, spec.input_rate.min(rate), cutoff.min(rate / 2.0))
}
