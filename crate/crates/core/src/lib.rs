//! Tractable Schrödinger bridges between paired waveforms.
//!
//! The bridge is pinned at a high-resolution waveform at `t = 0` and at its
//! band-limited counterpart at `t = 1`. With Dirac boundaries and a linear
//! reference SDE, every marginal is Gaussian with closed-form coefficients
//! ([`schedule`]), so training ([`bridge`]) and inference ([`sampler`]) need
//! no PDE solving at all.
//!
//! Module map:
//!
//! - [`schedule`]: noise schedules and bridge coefficients.
//! - [`bridge`]: data scaling, marginal sampling, the bridge objective.
//! - [`sampler`]: probability-flow ODE and posterior SDE samplers.
//! - [`autodiff`] and [`denoiser`]: the `x0` predictor interface, an exact
//!   Gaussian oracle, and a small dilated-convolution network.
//! - [`dsp`]: degradation, STFT, WAV I/O.
//! - [`objective`]: multi-resolution magnitude and anti-wrapping phase losses.
//! - [`metrics`]: LSD, SI-SNR, spectrogram SSIM.
//! - [`harness`]: configuration, corpora, training loops and reports used by
//!   the command-line tool.

pub mod autodiff;
pub mod bridge;
pub mod denoiser;
pub mod dsp;
mod error;
pub mod harness;
pub mod metrics;
pub mod objective;
pub mod sampler;
pub mod schedule;

pub use error::{Error, ErrorKind, Result};
