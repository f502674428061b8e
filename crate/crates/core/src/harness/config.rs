//! Experiment configuration.
//!
//! Every section has defaults; a file only needs the keys it changes.
//! Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::{ScaleFactor, DEFAULT_SCALE, DEFAULT_T_MIN};
use crate::denoiser::{AdamConfig, WaveNetConfig};
use crate::dsp::{DegradationSpec, FilterFamily, MAX_INPUT_RATE, MIN_INPUT_RATE};
use crate::error::{Error, Result};
use crate::objective::AuxLossConfig;
use crate::sampler::{InferenceGrid, SamplerKind};
use crate::schedule::{ScheduleKind, ScheduleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct Config {
    pub seed: u64,
    pub schedule: ScheduleSection,
    pub model: WaveNetConfig,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub aux: AuxLossConfig,
    pub sampler: SamplerSection,
    pub data: DataSection,
    pub benchmark: BenchmarkSection,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    /// Defaults depend on `kind` when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            kind: ScheduleKind::GMax,
            beta0: None,
            beta1: None,
        }
    }
}

impl ScheduleSection {
    pub fn params(&self) -> Result<ScheduleParams> {
        let (d0, d1) = self.kind.default_betas();
        ScheduleParams::new(self.kind, self.beta0.unwrap_or(d0), self.beta1.unwrap_or(d1))
            .map_err(|e| Error::Config(format!("schedule: {e}")))
    }
}

/// A fixed scale factor or `"auto"` (estimated from the training corpus).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSetting {
    Fixed(f64),
    Keyword(ScaleKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleKeyword {
    Auto,
}

impl ScaleSetting {
    pub const AUTO: ScaleSetting = ScaleSetting::Keyword(ScaleKeyword::Auto);
}

impl fmt::Display for ScaleSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaleSetting::Fixed(v) => write!(f, "{v}"),
            ScaleSetting::Keyword(_) => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub scale_factor: ScaleSetting,
    pub t_min: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub window_len: usize,
    pub steps: u64,
    /// Loss rows are written every this many steps.
    pub log_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            scale_factor: ScaleSetting::Fixed(DEFAULT_SCALE),
            t_min: DEFAULT_T_MIN,
            batch_size: 16,
            lr: AdamConfig::default().lr,
            window_len: 32768,
            steps: 1_000_000,
            log_every: 100,
        }
    }
}

impl TrainSection {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub steps: u64,
    /// Falls back to `train.lr`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection { steps: 70_000, lr: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    /// Number of intervals on the linear grid.
    pub steps: usize,
    pub t_min: f64,
    /// When set, overrides `kind` and `steps` with a fixed low-NFE grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<usize>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            kind: SamplerKind::Ode1,
            steps: 8,
            t_min: crate::sampler::DEFAULT_T_MIN,
            preset: None,
        }
    }
}

impl SamplerSection {
    pub fn grid(&self) -> Result<InferenceGrid> {
        match self.preset {
            Some(n) => InferenceGrid::preset(n),
            None => InferenceGrid::linear(self.steps, self.t_min, self.kind),
        }
        .map_err(|e| Error::Config(format!("sampler: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub target_rate: u32,
    pub duration_secs: f64,
    pub min_sources: usize,
    pub max_sources: usize,
    /// Fixed input rate for degradation; random in [6, 48] kHz when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_rate: Option<f64>,
    /// Fixed filter family; random when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<FilterFamily>,
    /// Fixed filter order; random even order in 2..=10 when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    pub train_items: usize,
    pub test_items: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            target_rate: 48000,
            duration_secs: 0.7,
            min_sources: 3,
            max_sources: 8,
            input_rate: None,
            family: None,
            order: None,
            train_items: 200,
            test_items: 50,
        }
    }
}

impl DataSection {
    /// Applies the fixed fields over a randomly drawn specification.
    pub fn degradation(&self, random: DegradationSpec) -> DegradationSpec {
        DegradationSpec {
            family: self.family.unwrap_or(random.family),
            order: self.order.unwrap_or(random.order),
            input_rate: self.input_rate.unwrap_or(random.input_rate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub schedules: Vec<ScheduleKind>,
    /// Linear-grid step counts to evaluate, using `sampler.kind`.
    pub steps: Vec<usize>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            schedules: vec![ScheduleKind::GMax],
            steps: vec![8],
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => cfg_err(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.params()?;
        self.model.validate().map_err(|e| cfg_err(format!("model: {e}")))?;
        let t = &self.train;
        match t.scale_factor {
            ScaleSetting::Fixed(s) => {
                ScaleFactor::new(s).map_err(|e| cfg_err(format!("train.scale_factor: {e}")))?;
            }
            ScaleSetting::Keyword(ScaleKeyword::Auto) => {}
        }
        if !(t.t_min > 0.0 && t.t_min < 1.0) {
            return Err(cfg_err(format!("train.t_min must lie in (0, 1), got {}", t.t_min)));
        }
        if t.batch_size == 0 {
            return Err(cfg_err("train.batch_size must be positive"));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(cfg_err(format!("train.lr must be positive, got {}", t.lr)));
        }
        if t.window_len < self.aux.max_fft() {
            return Err(cfg_err(format!(
                "train.window_len {} is shorter than the largest aux frame {}",
                t.window_len,
                self.aux.max_fft()
            )));
        }
        if t.log_every == 0 {
            return Err(cfg_err("train.log_every must be positive"));
        }
        if let Some(lr) = self.finetune.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(cfg_err(format!("finetune.lr must be positive, got {lr}")));
            }
        }
        self.aux.validate()?;
        self.sampler.grid()?;
        let d = &self.data;
        if d.target_rate == 0 || d.duration_secs.is_nan() || d.duration_secs <= 0.0 {
            return Err(cfg_err("data.target_rate and data.duration_secs must be positive"));
        }
        if d.min_sources == 0 || d.min_sources > d.max_sources {
            return Err(cfg_err("data.min_sources must be in 1..=data.max_sources"));
        }
        if let Some(r) = d.input_rate {
            if !(MIN_INPUT_RATE..=MAX_INPUT_RATE).contains(&r) || r > d.target_rate as f64 {
                return Err(cfg_err(format!("data.input_rate {r} outside [6000, 48000] Hz")));
            }
        }
        let probe = DegradationSpec {
            family: d.family.unwrap_or(FilterFamily::Butterworth),
            order: d.order.unwrap_or(2),
            input_rate: d.input_rate.unwrap_or(d.target_rate as f64 / 2.0),
        };
        probe
            .validate(d.target_rate as f64)
            .map_err(|e| cfg_err(format!("data: {e}")))?;
        if self.benchmark.schedules.is_empty() || self.benchmark.steps.contains(&0) {
            return Err(cfg_err("benchmark.schedules must be non-empty and benchmark.steps positive"));
        }
        Ok(())
    }

    /// Learning rate used by `finetune`.
    pub fn finetune_lr(&self) -> f64 {
        self.finetune.lr.unwrap_or(self.train.lr)
    }

    /// Number of samples in a synthesized item.
    pub fn item_len(&self) -> usize {
        (self.data.duration_secs * self.data.target_rate as f64).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = Config::default();
        assert_eq!(c.train.scale_factor, ScaleSetting::Fixed(12.0));
        assert_eq!(c.train.lr, 5e-5);
        assert_eq!(c.train.window_len, 32768);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.aux.lambda_mag, 4e-6);
        assert_eq!(c.aux.lambda_phase, 5e-6);
        assert_eq!(c.aux.resolutions, vec![512, 1024, 2048]);
        let s = c.schedule.params().unwrap();
        assert_eq!((s.beta0(), s.beta1()), (8e-7, 8e-2));
        assert_eq!(c.item_len(), 33600);
        c.validate().unwrap();
    }

    #[test]
    fn vp_betas_resolve_from_kind() {
        let c = Config::from_toml("[schedule]\nkind = \"vp\"\n").unwrap();
        let s = c.schedule.params().unwrap();
        assert_eq!((s.beta0(), s.beta1()), (0.01, 20.0));
        let g = Config::from_toml("[schedule]\nkind = \"gconst\"\nbeta0 = 0.08\nbeta1 = 0.08\n").unwrap();
        assert_eq!(g.schedule.params().unwrap().beta1(), 0.08);
    }

    #[test]
    fn round_trip_is_identity() {
        let text = "seed = 7\n[train]\nscale_factor = \"auto\"\nsteps = 10\n[data]\ninput_rate = 8000.0\nfamily = \"chebyshev1\"\n[sampler]\npreset = 2\n";
        let a = Config::from_toml(text).unwrap();
        assert_eq!(a.train.scale_factor, ScaleSetting::AUTO);
        let b = Config::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        let d = Config::default();
        assert_eq!(Config::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn rejects_unknown_and_invalid_keys() {
        for bad in [
            "sed = 1\n",
            "[train]\nbogus = 1\n",
            "[train]\nscale_factor = \"big\"\n",
            "[train]\nscale_factor = -1.0\n",
            "[train]\nt_min = 0.0\n",
            "[schedule]\nkind = \"svp\"\n",
            "[schedule]\nkind = \"gconst\"\nbeta0 = 0.1\nbeta1 = 0.2\n",
            "[sampler]\npreset = 3\n",
            "[data]\ninput_rate = 5000.0\n",
            "[data]\norder = 3\nfamily = \"butterworth\"\n",
            "[aux]\nresolutions = []\n",
            "[train]\nwindow_len = 100\n",
        ] {
            let err = Config::from_toml(bad).unwrap_err();
            assert_eq!(err.kind(), crate::ErrorKind::Config, "{bad}: {err}");
        }
    }
}
