use super::Denoiser;
use crate::error::{check_len, Error, Result};
use crate::schedule::{BridgeCoefficients, ScheduleParams};

/// Exact posterior mean for the toy model `x0 = x_T + h`, `h ~ N(0, v_h)`,
/// applied coordinatewise under the bridge marginal of `sched`.
///
/// ```
/// use wavebridge::denoiser::{AnalyticGaussianDenoiser, Denoiser};
/// use wavebridge::schedule::ScheduleParams;
///
/// let d = AnalyticGaussianDenoiser::new(1.0, ScheduleParams::gconst(0.08).unwrap()).unwrap();
/// let x0 = d.predict(&[1.0], 0.5, &[0.0]).unwrap();
/// assert!((x0[0] - 0.5 / 0.27).abs() < 1e-12);
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticGaussianDenoiser {
    v_h: f64,
    sched: ScheduleParams,
}

impl AnalyticGaussianDenoiser {
    pub fn new(v_h: f64, sched: ScheduleParams) -> Result<Self> {
        if !(v_h > 0.0 && v_h.is_finite()) {
            return Err(Error::invalid(format!("residual variance must be positive, got {v_h}")));
        }
        Ok(AnalyticGaussianDenoiser { v_h, sched })
    }

    pub fn v_h(&self) -> f64 {
        self.v_h
    }

    pub fn schedule(&self) -> &ScheduleParams {
        &self.sched
    }

    /// Weight on the innovation `x_t − (a_t + b_t)·x_T`.
    pub fn gain(&self, c: &BridgeCoefficients) -> f64 {
        if c.a_t == 0.0 {
            return 0.0;
        }
        c.a_t * self.v_h / (c.a_t * c.a_t * self.v_h + c.c_t * c.c_t)
    }

    /// Posterior variance `Var(x0 | x_t, x_T)` at the given coefficients.
    pub fn posterior_variance(&self, c: &BridgeCoefficients) -> f64 {
        let denom = c.a_t * c.a_t * self.v_h + c.c_t * c.c_t;
        if denom == 0.0 {
            return self.v_h;
        }
        self.v_h * c.c_t * c.c_t / denom
    }
}

/// Closed-form `E[x0 | x_t, x_T]` for given coefficients.
pub fn analytic_predict(x_t: &[f64], x_end: &[f64], gain: f64, c: &BridgeCoefficients) -> Vec<f64> {
    let ab = c.a_t + c.b_t;
    x_t.iter().zip(x_end).map(|(&x, &e)| e + gain * (x - ab * e)).collect()
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn predict(&self, x_t: &[f64], t: f64, x_end: &[f64]) -> Result<Vec<f64>> {
        check_len(x_t.len(), x_end.len())?;
        let c = self.sched.coefficients(t)?;
        Ok(analytic_predict(x_t, x_end, self.gain(&c), &c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn boundary_cases() {
        let d = AnalyticGaussianDenoiser::new(1.0, ScheduleParams::gmax()).unwrap();
        assert_eq!(d.predict(&[0.7], 0.0, &[0.2]).unwrap(), vec![0.7]);
        assert_eq!(d.predict(&[0.7], 1.0, &[0.2]).unwrap(), vec![0.2]);
        assert!(AnalyticGaussianDenoiser::new(0.0, ScheduleParams::gmax()).is_err());
    }

    #[test]
    fn midpoint_matches_monte_carlo_posterior_mean() {
        // x0 = h, x_T = 0, x_t = 0.5 h + √0.02 ε. Estimate E[h | x_t ≈ 1] by
        // importance weighting each draw with the likelihood of x_t = 1.
        let d = AnalyticGaussianDenoiser::new(1.0, ScheduleParams::gconst(0.08).unwrap()).unwrap();
        let got = d.predict(&[1.0], 0.5, &[0.0]).unwrap()[0];
        assert!((got - 1.851_851_851_851_852).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut sw, mut swh, mut swh2, mut sw2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..1_000_000 {
            let h: f64 = rng.sample(StandardNormal);
            let r = 1.0 - 0.5 * h;
            let w = (-r * r / (2.0 * 0.02)).exp();
            sw += w;
            sw2 += w * w;
            swh += w * h;
            swh2 += w * h * h;
        }
        let mean = swh / sw;
        let var = swh2 / sw - mean * mean;
        let ess = sw * sw / sw2;
        let se = (var / ess).sqrt();
        assert!((mean - got).abs() < 3.0 * se, "{mean} vs {got} (se {se})");
    }

    #[test]
    fn linear_in_inputs() {
        let d = AnalyticGaussianDenoiser::new(0.3, ScheduleParams::vp()).unwrap();
        let base = d.predict(&[0.4, -1.0], 0.37, &[0.1, 0.5]).unwrap();
        let scaled = d.predict(&[1.2, -3.0], 0.37, &[0.3, 1.5]).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert!((3.0 * a - b).abs() < 1e-14);
        }
    }
}
