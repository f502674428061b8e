use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub(crate) fn inverse(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Full complex spectrum of a real signal (unnormalized).
pub(crate) fn real_spectrum(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward(buf.len()).process(&mut buf);
    buf
}

/// Real part of the normalized inverse transform.
pub(crate) fn real_inverse(mut spec: Vec<Complex64>) -> Vec<f64> {
    let n = spec.len();
    inverse(n).process(&mut spec);
    let scale = 1.0 / n as f64;
    spec.iter().map(|c| c.re * scale).collect()
}
