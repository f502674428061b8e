//! A small non-causal WaveNet-style stack: dilated gated convolutions with
//! residual and skip paths, conditioned on `t` through a sinusoidal embedding.
//!
//! `x_t` and `x_T` enter as two input channels and the network outputs a
//! correction added to `x_T`, so with the zero-initialized output projection a
//! fresh network predicts `x0 = x_T`.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Denoiser, Trainable};
use crate::autodiff::{Eager, Graph, Tape, Tensor, Var};
use crate::error::{check_len, Error, Result};

pub const EMBED_DIM: usize = 64;
const KERNEL: usize = 3;
const MAX_LAYERS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveNetConfig {
    pub channels: usize,
    pub layers: usize,
}

impl Default for WaveNetConfig {
    fn default() -> Self {
        WaveNetConfig { channels: 16, layers: 6 }
    }
}

impl WaveNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.layers == 0 || self.layers > MAX_LAYERS {
            return Err(Error::invalid(format!(
                "network needs channels >= 1 and 1..={MAX_LAYERS} layers, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << layer
    }

    /// `1 + (K − 1)·Σ dilations`.
    pub fn receptive_field(&self) -> usize {
        1 + (KERNEL - 1) * (0..self.layers).map(|l| self.dilation(l)).sum::<usize>()
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let input = 2 * c + c;
        let embed = EMBED_DIM * c + c;
        let per_layer = (2 * c * c + 2 * c) + (2 * c * c * KERNEL + 2 * c) + 2 * (c * c + c);
        let output = (c * c + c) + (c + 1);
        input + embed + self.layers * per_layer + output
    }
}

/// 32 sines then 32 cosines of `t` at frequencies geometric in `[1, 10⁴]`.
pub fn time_embedding(t: f64) -> Vec<f64> {
    let half = EMBED_DIM / 2;
    let freqs: Vec<f64> = (0..half).map(|k| 1e4f64.powf(k as f64 / (half - 1) as f64)).collect();
    freqs.iter().map(|f| (f * t).sin()).chain(freqs.iter().map(|f| (f * t).cos())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyWaveNet {
    config: WaveNetConfig,
    params: Vec<NamedTensor>,
}

/// Parameter handles in the order they are stored.
struct Handles<V> {
    input_w: V,
    input_b: V,
    embed_w: V,
    embed_b: V,
    layers: Vec<LayerHandles<V>>,
    out1_w: V,
    out1_b: V,
    out2_w: V,
    out2_b: V,
}

struct LayerHandles<V> {
    time_w: V,
    time_b: V,
    conv_w: V,
    conv_b: V,
    res_w: V,
    res_b: V,
    skip_w: V,
    skip_b: V,
}

fn layout(cfg: &WaveNetConfig) -> Vec<(String, Vec<usize>, usize)> {
    // (name, shape, fan_in); fan_in 0 marks zero-initialized tensors
    let c = cfg.channels;
    let mut v = vec![
        ("input.w".to_string(), vec![c, 2, 1], 2),
        ("input.b".to_string(), vec![c], 0),
        ("embed.w".to_string(), vec![c, EMBED_DIM], EMBED_DIM),
        ("embed.b".to_string(), vec![c], 0),
    ];
    for l in 0..cfg.layers {
        v.push((format!("layer{l}.time.w"), vec![2 * c, c], c));
        v.push((format!("layer{l}.time.b"), vec![2 * c], 0));
        v.push((format!("layer{l}.conv.w"), vec![2 * c, c, KERNEL], c * KERNEL));
        v.push((format!("layer{l}.conv.b"), vec![2 * c], 0));
        v.push((format!("layer{l}.res.w"), vec![c, c, 1], c));
        v.push((format!("layer{l}.res.b"), vec![c], 0));
        v.push((format!("layer{l}.skip.w"), vec![c, c, 1], c));
        v.push((format!("layer{l}.skip.b"), vec![c], 0));
    }
    v.push(("out1.w".to_string(), vec![c, c, 1], c));
    v.push(("out1.b".to_string(), vec![c], 0));
    v.push(("out2.w".to_string(), vec![1, c, 1], 0));
    v.push(("out2.b".to_string(), vec![1], 0));
    v
}

impl TinyWaveNet {
    /// Seeded initialization: weights `N(0, 1/fan_in)`, biases and the final
    /// projection zero.
    pub fn new(config: WaveNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout(&config)
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let mut tensor = Tensor::zeros(shape);
                if fan_in > 0 {
                    let std = 1.0 / (fan_in as f64).sqrt();
                    for v in tensor.data_mut() {
                        *v = std * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                NamedTensor { name, tensor }
            })
            .collect();
        Ok(TinyWaveNet { config, params })
    }

    /// Rebuilds a network from stored tensors, checking names and shapes.
    pub fn from_params(config: WaveNetConfig, params: Vec<NamedTensor>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in expected.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                return Err(Error::invalid(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
            if p.tensor.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite values in parameter {name}")));
            }
        }
        Ok(TinyWaveNet { config, params })
    }

    pub fn config(&self) -> &WaveNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.params.iter_mut().map(|p| p.tensor.data_mut())
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    fn handles<G: Graph>(&self, g: &mut G, trainable: bool) -> Handles<G::Var> {
        let mut it = self.params.iter().map(|p| g.leaf(p.tensor.clone(), trainable)).collect::<Vec<_>>().into_iter();
        let mut next = || it.next().expect("layout and parameters agree");
        let input_w = next();
        let input_b = next();
        let embed_w = next();
        let embed_b = next();
        let layers = (0..self.config.layers)
            .map(|_| LayerHandles {
                time_w: next(),
                time_b: next(),
                conv_w: next(),
                conv_b: next(),
                res_w: next(),
                res_b: next(),
                skip_w: next(),
                skip_b: next(),
            })
            .collect();
        Handles {
            input_w,
            input_b,
            embed_w,
            embed_b,
            layers,
            out1_w: next(),
            out1_b: next(),
            out2_w: next(),
            out2_b: next(),
        }
    }

    /// Network correction `[1, L]` (before adding `x_T`).
    fn correction<G: Graph>(&self, g: &mut G, h: &Handles<G::Var>, x_t: &[f64], t: f64, x_end: &[f64]) -> G::Var {
        let c = self.config.channels;
        let len = x_t.len();
        let mut input = Vec::with_capacity(2 * len);
        input.extend_from_slice(x_t);
        input.extend_from_slice(x_end);
        let input = g.leaf(Tensor::new(vec![2, len], input).expect("2×L input"), false);
        let emb = g.leaf(Tensor::vector(time_embedding(t)), false);
        let e = g.affine(&h.embed_w, &emb, &h.embed_b);
        let e = g.tanh(&e);
        let mut x = g.conv1d(&input, &h.input_w, Some(&h.input_b), 1);
        let mut skip: Option<G::Var> = None;
        for (l, lh) in h.layers.iter().enumerate() {
            let tb = g.affine(&lh.time_w, &e, &lh.time_b);
            let z = g.conv1d(&x, &lh.conv_w, Some(&lh.conv_b), self.config.dilation(l));
            let z = g.channel_bias(&z, &tb);
            let filt = g.rows(&z, 0, c);
            let gate = g.rows(&z, c, 2 * c);
            let filt = g.tanh(&filt);
            let gate = g.sigmoid(&gate);
            let act = g.mul(&filt, &gate);
            let r = g.conv1d(&act, &lh.res_w, Some(&lh.res_b), 1);
            let sum = g.add(&x, &r);
            x = g.scale(&sum, FRAC_1_SQRT_2);
            let s = g.conv1d(&act, &lh.skip_w, Some(&lh.skip_b), 1);
            skip = Some(match skip {
                None => s,
                Some(acc) => g.add(&acc, &s),
            });
        }
        let skip = skip.expect("at least one layer");
        let skip = g.scale(&skip, 1.0 / (self.config.layers as f64).sqrt());
        let y = g.tanh(&skip);
        let y = g.conv1d(&y, &h.out1_w, Some(&h.out1_b), 1);
        let y = g.tanh(&y);
        g.conv1d(&y, &h.out2_w, Some(&h.out2_b), 1)
    }

    fn check_inputs(x_t: &[f64], t: f64, x_end: &[f64]) -> Result<()> {
        check_len(x_t.len(), x_end.len())?;
        if x_t.is_empty() {
            return Err(Error::invalid("empty input"));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("time {t} outside [0, 1]")));
        }
        Ok(())
    }
}

impl Denoiser for TinyWaveNet {
    fn predict(&self, x_t: &[f64], t: f64, x_end: &[f64]) -> Result<Vec<f64>> {
        Self::check_inputs(x_t, t, x_end)?;
        let mut g = Eager;
        let h = self.handles(&mut g, false);
        let corr = self.correction(&mut g, &h, x_t, t, x_end);
        Ok(x_end.iter().zip(corr.data()).map(|(e, c)| e + c).collect())
    }
}

impl Trainable for TinyWaveNet {
    fn param_lens(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.tensor.len()).collect()
    }

    fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.tensor.clone())).collect()
    }

    fn record(&self, tape: &mut Tape, params: &[Var], x_t: &[f64], t: f64, x_end: &[f64]) -> Result<Var> {
        Self::check_inputs(x_t, t, x_end)?;
        if params.len() != self.params.len() {
            return Err(Error::invalid("parameter handle count mismatch"));
        }
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("checked length");
        let h = Handles {
            input_w: next(),
            input_b: next(),
            embed_w: next(),
            embed_b: next(),
            layers: (0..self.config.layers)
                .map(|_| LayerHandles {
                    time_w: next(),
                    time_b: next(),
                    conv_w: next(),
                    conv_b: next(),
                    res_w: next(),
                    res_b: next(),
                    skip_w: next(),
                    skip_b: next(),
                })
                .collect(),
            out1_w: next(),
            out1_b: next(),
            out2_w: next(),
            out2_b: next(),
        };
        let corr = self.correction(tape, &h, x_t, t, x_end);
        let corr = tape.reshape(corr, vec![x_t.len()])?;
        let end = tape.constant(Tensor::vector(x_end.to_vec()));
        Ok(tape.add(end, corr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{training_step, ScaleFactor, WaveformPair};
    use crate::schedule::ScheduleParams;

    fn signal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn default_size_and_receptive_field() {
        let cfg = WaveNetConfig::default();
        let net = TinyWaveNet::new(cfg, 0).unwrap();
        assert_eq!(cfg.receptive_field(), 1 + 2 * (1 + 2 + 4 + 8 + 16 + 32));
        assert_eq!(net.num_params(), cfg.param_count());
        assert_eq!(cfg.param_count(), 17_313);
        assert!(cfg.param_count() < 100_000);
    }

    #[test]
    fn fresh_network_predicts_the_prior() {
        let net = TinyWaveNet::new(WaveNetConfig::default(), 1).unwrap();
        let x_t = signal(300, 2);
        let x_end = signal(300, 3);
        assert_eq!(net.predict(&x_t, 0.3, &x_end).unwrap(), x_end);
    }

    fn perturbed(seed: u64, cfg: WaveNetConfig) -> TinyWaveNet {
        let mut net = TinyWaveNet::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for p in net.params_mut() {
            for v in p.iter_mut() {
                *v += 0.1 * rng.random_range(-1.0..1.0);
            }
        }
        net
    }

    #[test]
    fn constant_input_gives_constant_interior() {
        let cfg = WaveNetConfig::default();
        let net = perturbed(4, cfg);
        let n = 600;
        let y = net.predict(&vec![0.3; n], 0.5, &vec![-0.2; n]).unwrap();
        let r = cfg.receptive_field();
        let interior = &y[r..n - r];
        assert!(interior.iter().all(|v| (v - interior[0]).abs() < 1e-12));
    }

    #[test]
    fn reproducible_output() {
        let a = perturbed(5, WaveNetConfig::default());
        let b = perturbed(5, WaveNetConfig::default());
        let x = signal(200, 6);
        assert_eq!(a.predict(&x, 0.2, &x).unwrap(), b.predict(&x, 0.2, &x).unwrap());
    }

    #[test]
    fn eager_and_tape_agree() {
        let net = perturbed(7, WaveNetConfig { channels: 4, layers: 3 });
        let x_t = signal(50, 8);
        let x_end = signal(50, 9);
        let eager = net.predict(&x_t, 0.6, &x_end).unwrap();
        let mut tape = Tape::new();
        let leaves = net.leaves(&mut tape);
        let out = net.record(&mut tape, &leaves, &x_t, 0.6, &x_end).unwrap();
        assert_eq!(tape.value(out).data(), eager.as_slice());
    }

    #[test]
    fn bridge_loss_gradient_matches_finite_differences() {
        let cfg = WaveNetConfig { channels: 4, layers: 3 };
        let net = perturbed(10, cfg);
        let n = 64;
        let hr = signal(n, 11);
        let lr: Vec<f64> = hr.iter().map(|v| 0.8 * v).collect();
        let pair = WaveformPair::new(hr, lr, 48000.0, 16000.0, 8000.0).unwrap();
        let sched = ScheduleParams::gmax();
        let s = ScaleFactor::new(3.0).unwrap();
        let run = |model: &TinyWaveNet| {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            training_step(std::slice::from_ref(&pair), s, &sched, 1e-5, model, &mut rng).unwrap()
        };
        let base = run(&net);
        let h = 1e-4;
        let mut worst = 0.0_f64;
        for (pi, grad) in base.grads.iter().enumerate() {
            for (j, &g) in grad.iter().enumerate() {
                let mut plus = net.clone();
                plus.params[pi].tensor.data_mut()[j] += h;
                let mut minus = net.clone();
                minus.params[pi].tensor.data_mut()[j] -= h;
                let fd = (run(&plus).terms.total - run(&minus).terms.total) / (2.0 * h);
                let denom = fd.abs().max(g.abs()).max(1e-7);
                worst = worst.max((fd - g).abs() / denom);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn from_params_checks_layout() {
        let net = TinyWaveNet::new(WaveNetConfig::default(), 0).unwrap();
        let ok = TinyWaveNet::from_params(*net.config(), net.params().to_vec()).unwrap();
        assert_eq!(ok, net);
        let mut bad = net.params().to_vec();
        bad.pop();
        assert!(TinyWaveNet::from_params(*net.config(), bad).is_err());
        assert!(TinyWaveNet::from_params(WaveNetConfig { channels: 8, layers: 6 }, net.params().to_vec()).is_err());
    }

    #[test]
    fn embedding_shape() {
        let e = time_embedding(0.0);
        assert_eq!(e.len(), EMBED_DIM);
        assert!(e[..32].iter().all(|&v| v == 0.0));
        assert!(e[32..].iter().all(|&v| v == 1.0));
    }
}
