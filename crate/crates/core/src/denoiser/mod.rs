//! The `x0` predictor interface and its implementations.
//!
//! A [`Denoiser`] maps `(x_t, t, x_T)` to an estimate of the clean endpoint.
//! [`AnalyticGaussianDenoiser`] is the exact posterior mean of a scalar toy
//! model and serves as the verification oracle for the samplers;
//! [`TinyWaveNet`] is the trainable network.

mod adam;
mod analytic;
mod checkpoint;
mod wavenet;

use std::cell::Cell;

pub use adam::{Adam, AdamConfig};
pub use analytic::{analytic_predict, AnalyticGaussianDenoiser};
pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use wavenet::{time_embedding, NamedTensor, TinyWaveNet, WaveNetConfig, EMBED_DIM};

use crate::autodiff::{Tape, Var};
use crate::error::Result;

pub trait Denoiser {
    fn predict(&self, x_t: &[f64], t: f64, x_end: &[f64]) -> Result<Vec<f64>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, x_t: &[f64], t: f64, x_end: &[f64]) -> Result<Vec<f64>> {
        (**self).predict(x_t, t, x_end)
    }
}

/// A denoiser whose forward pass can be recorded for differentiation.
pub trait Trainable {
    /// Element count of each parameter tensor, in a fixed order.
    fn param_lens(&self) -> Vec<usize>;

    /// Pushes every parameter onto `tape` as a differentiable leaf.
    fn leaves(&self, tape: &mut Tape) -> Vec<Var>;

    /// Records the prediction for one item, using leaves from [`leaves`](Self::leaves).
    fn record(&self, tape: &mut Tape, params: &[Var], x_t: &[f64], t: f64, x_end: &[f64]) -> Result<Var>;
}

/// Wraps a denoiser and counts calls to [`Denoiser::predict`].
#[derive(Debug)]
pub struct CountingDenoiser<D> {
    inner: D,
    calls: Cell<usize>,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        CountingDenoiser { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.calls.set(0);
    }

    pub fn into_inner(self) -> D {
        self.inner
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn predict(&self, x_t: &[f64], t: f64, x_end: &[f64]) -> Result<Vec<f64>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(x_t, t, x_end)
    }
}
