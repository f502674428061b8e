//! Training and fine-tuning loops.
//!
//! Step `k` draws its batch, times and noise from a generator that depends
//! only on `(seed, k)`, and parameters are kept on the f32 grid after every
//! update. Together with the f64 optimizer moments stored in checkpoints this
//! makes an interrupted and resumed run identical to an uninterrupted one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Config, ScaleSetting};
use crate::bridge::{estimate_scale, training_step_with, BridgeObjective, ItemLoss, ScaleFactor, WaveformPair};
use crate::denoiser::{Adam, Checkpoint, OptimizerState, TinyWaveNet, Trainable};
use crate::error::{Error, Result};
use crate::objective::FinalObjective;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Bridge regression only.
    Bridge,
    /// Bridge regression plus the weighted auxiliary losses.
    Finetune,
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub l_bridge: f64,
    pub l_mag: f64,
    pub l_phase: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: TinyWaveNet,
    pub adam: Adam,
    /// Completed optimizer steps.
    pub step: u64,
    pub scale: ScaleFactor,
}

fn round_to_f32(model: &mut TinyWaveNet) {
    for p in model.params_mut() {
        p.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// Resolves `train.scale_factor`, estimating it from `pairs` for `"auto"`.
pub fn resolve_scale(cfg: &Config, pairs: &[WaveformPair]) -> Result<ScaleFactor> {
    match cfg.train.scale_factor {
        ScaleSetting::Fixed(s) => ScaleFactor::new(s),
        ScaleSetting::Keyword(_) => estimate_scale(pairs),
    }
}

impl TrainState {
    /// Fresh model (seeded by `cfg.seed`) on the f32 grid.
    pub fn init(cfg: &Config, scale: ScaleFactor) -> Result<Self> {
        let mut model = TinyWaveNet::new(cfg.model, cfg.seed)?;
        round_to_f32(&mut model);
        let adam = Adam::new(cfg.train.adam(), &model.param_lens());
        Ok(TrainState {
            model,
            adam,
            step: 0,
            scale,
        })
    }

    /// Checkpoint whose config snapshot records the resolved scale factor.
    pub fn to_checkpoint(&self, cfg: &Config) -> Checkpoint {
        let mut snapshot = cfg.clone();
        snapshot.train.scale_factor = ScaleSetting::Fixed(self.scale.get());
        let (m, v) = self.adam.moments();
        Checkpoint {
            config_toml: snapshot.to_toml(),
            step: self.step,
            params: self.model.params().to_vec(),
            optimizer: Some(OptimizerState {
                step: self.adam.step_count(),
                m: m.to_vec(),
                v: v.to_vec(),
            }),
        }
    }

    /// Restores the state and the configuration snapshot of a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Config, Self)> {
        let cfg = Config::from_toml(&ckpt.config_toml)?;
        let scale = match cfg.train.scale_factor {
            ScaleSetting::Fixed(s) => ScaleFactor::new(s)?,
            ScaleSetting::Keyword(_) => {
                return Err(Error::Config("checkpoint does not record a resolved scale factor".into()));
            }
        };
        let model = TinyWaveNet::from_params(cfg.model, ckpt.params.clone())?;
        let adam = match &ckpt.optimizer {
            Some(o) => Adam::from_state(cfg.train.adam(), o.step, o.m.clone(), o.v.clone())?,
            None => Adam::new(cfg.train.adam(), &model.param_lens()),
        };
        Ok((
            cfg,
            TrainState {
                model,
                adam,
                step: ckpt.step,
                scale,
            },
        ))
    }
}

/// Generator for optimizer step `step`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_0000_0000_0001);
    rng.set_stream(step);
    rng
}

/// Random windows of `window_len` samples from random items.
pub fn draw_batch<R: Rng + ?Sized>(pairs: &[WaveformPair], batch: usize, window_len: usize, rng: &mut R) -> Result<Vec<WaveformPair>> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty training corpus"));
    }
    (0..batch)
        .map(|_| {
            let p = &pairs[rng.random_range(0..pairs.len())];
            if p.len() < window_len {
                return Err(Error::invalid(format!(
                    "item of {} samples is shorter than train.window_len = {window_len}",
                    p.len()
                )));
            }
            let start = rng.random_range(0..=p.len() - window_len);
            p.window(start, window_len)
        })
        .collect()
}

/// Runs `steps` optimizer steps from `state.step`, calling `log` every
/// `train.log_every` steps and after the last one.
pub fn run(
    state: &mut TrainState,
    pairs: &[WaveformPair],
    cfg: &Config,
    phase: Phase,
    steps: u64,
    mut log: impl FnMut(&LossRow) -> Result<()>,
) -> Result<()> {
    let sched = cfg.schedule.params()?;
    let finetune = FinalObjective {
        aux: cfg.aux.clone(),
        rate: cfg.data.target_rate as f64,
    };
    let loss: &dyn ItemLoss = match phase {
        Phase::Bridge => &BridgeObjective,
        Phase::Finetune => &finetune,
    };
    state.adam.config.lr = match phase {
        Phase::Bridge => cfg.train.lr,
        Phase::Finetune => cfg.finetune_lr(),
    };
    let end = state.step + steps;
    while state.step < end {
        let k = state.step;
        let mut rng = step_rng(cfg.seed, k);
        let batch = draw_batch(pairs, cfg.train.batch_size, cfg.train.window_len, &mut rng)?;
        let out = training_step_with(&batch, state.scale, &sched, cfg.train.t_min, &state.model, loss, &mut rng)?;
        if !state.adam.update(state.model.params_mut(), &out.grads)? {
            return Err(Error::Numeric(format!("non-finite gradient at step {k}")));
        }
        round_to_f32(&mut state.model);
        state.step += 1;
        if state.step.is_multiple_of(cfg.train.log_every) || state.step == end {
            log(&LossRow {
                step: state.step,
                l_bridge: out.terms.bridge,
                l_mag: out.terms.mag,
                l_phase: out.terms.phase,
                l_total: out.terms.total,
            })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::corpus::{degrade_corpus, synth_corpus};

    fn tiny() -> (Config, Vec<WaveformPair>) {
        let mut cfg = Config::from_toml(
            "seed = 4\n[model]\nchannels = 4\nlayers = 2\n[train]\nbatch_size = 2\nwindow_len = 2048\nlr = 1e-3\nlog_every = 1\n[data]\ninput_rate = 8000.0\n[aux]\nresolutions = [256, 512]\n",
        )
        .unwrap();
        cfg.data.duration_secs = 0.1;
        let items = synth_corpus(&cfg.data, cfg.item_len(), 3, 1).unwrap();
        let pairs = degrade_corpus(&items, &cfg.data, 1).unwrap().into_iter().map(|(_, p)| p).collect();
        (cfg, pairs)
    }

    fn train(cfg: &Config, pairs: &[WaveformPair], state: &mut TrainState, phase: Phase, steps: u64) -> Vec<LossRow> {
        let mut rows = Vec::new();
        run(state, pairs, cfg, phase, steps, |r| {
            rows.push(*r);
            Ok(())
        })
        .unwrap();
        rows
    }

    #[test]
    fn zero_steps_keep_initialization() {
        let (cfg, pairs) = tiny();
        let mut s = TrainState::init(&cfg, ScaleFactor::default()).unwrap();
        let init = s.clone();
        assert!(train(&cfg, &pairs, &mut s, Phase::Bridge, 0).is_empty());
        assert_eq!(s, init);
        let ckpt = s.to_checkpoint(&cfg);
        let (_, back) = TrainState::from_checkpoint(&ckpt).unwrap();
        assert_eq!(back.model, init.model);
    }

    #[test]
    fn reproducible_and_resumable() {
        let (cfg, pairs) = tiny();
        let mut a = TrainState::init(&cfg, ScaleFactor::default()).unwrap();
        let la = train(&cfg, &pairs, &mut a, Phase::Bridge, 6);
        let mut b = TrainState::init(&cfg, ScaleFactor::default()).unwrap();
        let lb = train(&cfg, &pairs, &mut b, Phase::Bridge, 6);
        assert_eq!(la, lb);
        assert_eq!(la.len(), 6);

        let mut c = TrainState::init(&cfg, ScaleFactor::default()).unwrap();
        let mut lc = train(&cfg, &pairs, &mut c, Phase::Bridge, 3);
        let bytes = c.to_checkpoint(&cfg).to_bytes();
        let (cfg2, mut d) = TrainState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        lc.extend(train(&cfg2, &pairs, &mut d, Phase::Bridge, 3));
        assert_eq!(lc, la);
        assert_eq!(d.model, a.model);
    }

    #[test]
    fn finetune_without_aux_weights_is_bridge_training() {
        let (mut cfg, pairs) = tiny();
        cfg.aux.lambda_mag = 0.0;
        cfg.aux.lambda_phase = 0.0;
        let mut a = TrainState::init(&cfg, ScaleFactor::default()).unwrap();
        let mut b = a.clone();
        let la = train(&cfg, &pairs, &mut a, Phase::Bridge, 4);
        let lb = train(&cfg, &pairs, &mut b, Phase::Finetune, 4);
        assert_eq!(la, lb);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn finetune_logs_aux_terms() {
        let (cfg, pairs) = tiny();
        let mut s = TrainState::init(&cfg, ScaleFactor::default()).unwrap();
        let rows = train(&cfg, &pairs, &mut s, Phase::Finetune, 2);
        for r in rows {
            assert!(r.l_mag > 0.0 && r.l_phase > 0.0);
            let want = r.l_bridge + cfg.aux.lambda_mag * r.l_mag + cfg.aux.lambda_phase * r.l_phase;
            assert!((r.l_total - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn params_stay_on_f32_grid() {
        let (cfg, pairs) = tiny();
        let mut s = TrainState::init(&cfg, ScaleFactor::default()).unwrap();
        train(&cfg, &pairs, &mut s, Phase::Bridge, 2);
        for p in s.model.params() {
            assert!(p.tensor.data().iter().all(|&v| v == v as f32 as f64));
        }
    }

    #[test]
    fn scale_resolution() {
        let (mut cfg, pairs) = tiny();
        assert_eq!(resolve_scale(&cfg, &pairs).unwrap().get(), 12.0);
        cfg.train.scale_factor = ScaleSetting::AUTO;
        let s = resolve_scale(&cfg, &pairs).unwrap();
        assert_eq!(s, estimate_scale(&pairs).unwrap());
    }

    #[test]
    fn short_items_are_rejected() {
        let (mut cfg, pairs) = tiny();
        cfg.train.window_len = 10_000;
        let mut s = TrainState::init(&cfg, ScaleFactor::default()).unwrap();
        assert!(run(&mut s, &pairs, &cfg, Phase::Bridge, 1, |_| Ok(())).is_err());
    }
}
