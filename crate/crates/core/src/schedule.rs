//! Noise schedules and closed-form bridge coefficients.
//!
//! All schedules share the linear diffusion rate `g²(t) = (1 − t)·β₀ + t·β₁`
//! on the unit horizon. `GMax` and `GConst` have no drift, so `α_t = ᾱ_t = 1`
//! and the marginal mean is a convex combination of the endpoints. `Vp` uses
//! the variance-preserving drift `f(t) = −g²(t)/2`.
//!
//! With `B(t) = ∫₀ᵗ g²`, the accumulated variances are
//!
//! | kind          | `σ_t²`          | `α_t`         |
//! |---------------|-----------------|---------------|
//! | GMax / GConst | `B(t)`          | `1`           |
//! | Vp            | `exp(B(t)) − 1` | `exp(−B(t)/2)` |
//!
//! and the marginal at `t` given both endpoints is
//! `N(a_t·x₀ + b_t·x_T, c_t²)` with
//! `a_t = α_t σ̄_t²/σ₁²`, `b_t = ᾱ_t σ_t²/σ₁²`, `c_t² = α_t² σ_t² σ̄_t²/σ₁²`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Default `β₀` of the asymmetric `GMax` schedule.
pub const GMAX_BETA0: f64 = 8e-7;
/// Default `β₁` of the asymmetric `GMax` schedule.
pub const GMAX_BETA1: f64 = 8e-2;
/// Default rates of the variance-preserving schedule.
pub const VP_BETA0: f64 = 0.01;
pub const VP_BETA1: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    GMax,
    GConst,
    Vp,
}

impl ScheduleKind {
    pub fn has_drift(self) -> bool {
        matches!(self, ScheduleKind::Vp)
    }

    /// Default `(β₀, β₁)` for this kind.
    pub fn default_betas(self) -> (f64, f64) {
        match self {
            ScheduleKind::GMax => (GMAX_BETA0, GMAX_BETA1),
            ScheduleKind::GConst => (GMAX_BETA1, GMAX_BETA1),
            ScheduleKind::Vp => (VP_BETA0, VP_BETA1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::GMax => "gmax",
            ScheduleKind::GConst => "gconst",
            ScheduleKind::Vp => "vp",
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmax" => Ok(ScheduleKind::GMax),
            "gconst" => Ok(ScheduleKind::GConst),
            "vp" => Ok(ScheduleKind::Vp),
            other => Err(Error::invalid(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// A validated schedule on the unit horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    kind: ScheduleKind,
    beta0: f64,
    beta1: f64,
}

impl ScheduleParams {
    pub fn new(kind: ScheduleKind, beta0: f64, beta1: f64) -> Result<Self> {
        if !(beta0.is_finite() && beta1.is_finite() && beta0 > 0.0 && beta1 > 0.0) {
            return Err(Error::invalid(format!(
                "schedule rates must be positive and finite (beta0={beta0}, beta1={beta1})"
            )));
        }
        match kind {
            ScheduleKind::GMax if beta1 < beta0 => Err(Error::invalid(format!(
                "gmax requires beta1 >= beta0 (beta0={beta0}, beta1={beta1})"
            ))),
            ScheduleKind::GConst if beta0 != beta1 => Err(Error::invalid(format!(
                "gconst requires beta0 == beta1 (beta0={beta0}, beta1={beta1})"
            ))),
            _ => Ok(ScheduleParams { kind, beta0, beta1 }),
        }
    }

    pub fn with_defaults(kind: ScheduleKind) -> Self {
        let (beta0, beta1) = kind.default_betas();
        ScheduleParams { kind, beta0, beta1 }
    }

    pub fn gmax() -> Self {
        Self::with_defaults(ScheduleKind::GMax)
    }

    pub fn gconst(beta: f64) -> Result<Self> {
        Self::new(ScheduleKind::GConst, beta, beta)
    }

    pub fn vp() -> Self {
        Self::with_defaults(ScheduleKind::Vp)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    /// Diffusion rate `g²(t)`.
    pub fn g2(&self, t: f64) -> f64 {
        (1.0 - t) * self.beta0 + t * self.beta1
    }

    /// Linear drift coefficient `f(t)`.
    pub fn drift(&self, t: f64) -> f64 {
        if self.kind.has_drift() {
            -0.5 * self.g2(t)
        } else {
            0.0
        }
    }

    /// `B(t) = ∫₀ᵗ g²(τ) dτ`.
    fn integrated_rate(&self, t: f64) -> f64 {
        self.beta0 * t + 0.5 * (self.beta1 - self.beta0) * t * t
    }

    /// `∫ₜ¹ g²(τ) dτ`, evaluated without cancellation near `t = 1`.
    fn integrated_rate_to_one(&self, t: f64) -> f64 {
        let u = 1.0 - t;
        self.beta0 * u + 0.5 * (self.beta1 - self.beta0) * u * (1.0 + t)
    }

    /// All closed-form quantities of the bridge at time `t`.
    pub fn coefficients(&self, t: f64) -> Result<BridgeCoefficients> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("time {t} outside [0, 1]")));
        }
        let (alpha_t, alpha_bar_t, sigma2_t, sigma_bar2_t, sigma2_1) = match self.kind {
            ScheduleKind::GMax | ScheduleKind::GConst => {
                let s2 = self.integrated_rate(t);
                let sb2 = self.integrated_rate_to_one(t);
                (1.0, 1.0, s2, sb2, self.integrated_rate(1.0))
            }
            ScheduleKind::Vp => {
                let b_t = self.integrated_rate(t);
                let rest = self.integrated_rate_to_one(t);
                let alpha_t = (-0.5 * b_t).exp();
                let alpha_bar_t = (0.5 * rest).exp();
                let s2 = b_t.exp_m1();
                let sb2 = b_t.exp() * rest.exp_m1();
                (alpha_t, alpha_bar_t, s2, sb2, self.integrated_rate(1.0).exp_m1())
            }
        };
        let a_t = alpha_t * sigma_bar2_t / sigma2_1;
        let b_t = alpha_bar_t * sigma2_t / sigma2_1;
        let c_t = alpha_t * (sigma2_t * sigma_bar2_t / sigma2_1).sqrt();
        Ok(BridgeCoefficients {
            t,
            alpha_t,
            alpha_bar_t,
            sigma2_t,
            sigma_bar2_t,
            sigma2_1,
            a_t,
            b_t,
            c_t,
        })
    }

    /// Time at which the marginal variance `σ_t² σ̄_t²/σ₁²` peaks, i.e. the
    /// root of `2σ_t² = σ₁²`, found by bisection.
    pub fn peak_time(&self) -> f64 {
        let s1 = self.coefficients(1.0).expect("t = 1 is in range").sigma2_1;
        let h = |t: f64| 2.0 * self.coefficients(t).expect("bisection stays in [0, 1]").sigma2_t - s1;
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut mid = 0.5;
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let v = h(mid);
            if v == 0.0 || v.abs() < 1e-13 * s1 {
                break;
            }
            if v < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * mid {
                break;
            }
        }
        mid
    }

    /// Marginal means `a_t·x₀ + b_t·x_T` at each grid time.
    pub fn mean_trajectory(&self, x0: &[f64], x_end: &[f64], grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len(x0.len(), x_end.len())?;
        grid.iter()
            .map(|&t| {
                let c = self.coefficients(t)?;
                Ok(x0.iter().zip(x_end).map(|(&p, &q)| c.a_t * p + c.b_t * q).collect())
            })
            .collect()
    }
}

/// Closed-form schedule quantities at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeCoefficients {
    pub t: f64,
    /// `exp(∫₀ᵗ f)`.
    pub alpha_t: f64,
    /// `exp(∫₁ᵗ f)`.
    pub alpha_bar_t: f64,
    /// `∫₀ᵗ g²/α²`.
    pub sigma2_t: f64,
    /// `∫ₜ¹ g²/α²`.
    pub sigma_bar2_t: f64,
    pub sigma2_1: f64,
    /// Weight on `x₀` in the marginal mean.
    pub a_t: f64,
    /// Weight on `x_T` in the marginal mean.
    pub b_t: f64,
    /// Marginal standard deviation.
    pub c_t: f64,
}

impl BridgeCoefficients {
    pub fn sigma_t(&self) -> f64 {
        self.sigma2_t.sqrt()
    }

    pub fn sigma_bar_t(&self) -> f64 {
        self.sigma_bar2_t.sqrt()
    }
}
