//! Plain-SGD trainer for the epsilon-prediction objective
//! `E ||eps - eps_hat(x_t, t)||^2` over random steps t.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{Condition, SampleBatch};
use crate::denoiser::{silu_deriv, Activation, Denoiser};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Probability of replacing a class condition with the unconditional
/// branch during training, so conditional models also serve
/// unconditional queries.
const COND_DROP_PROB: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub num_iterations: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Derived per-purpose seed, stable across platforms (splitmix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub(crate) struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub class_embed: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &Denoiser) -> Self {
        Gradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            class_embed: vec![0.0; model.class_embed.len()],
        }
    }
}

/// Forward + backward for one sample; accumulates into `grads` and
/// returns the per-sample loss `mean_j (out_j - target_j)^2`.
pub(crate) fn accumulate_loss_and_grad(
    model: &Denoiser,
    x_t: &[f64],
    t: usize,
    cond: Condition,
    target: &[f64],
    grads: &mut Gradients,
) -> Result<f64> {
    let d = model.input_dim;
    let v0 = model.embed_input(x_t, t, cond);
    // forward with caches
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(model.layers.len());
    let mut preacts: Vec<Vec<f64>> = Vec::with_capacity(model.layers.len());
    let mut v = v0;
    for layer in &model.layers {
        inputs.push(v.clone());
        let mut pre = Vec::new();
        layer.apply(&v, &mut pre);
        v = match layer.act {
            Activation::Silu => pre.iter().map(|&a| a / (1.0 + (-a).exp())).collect(),
            Activation::Identity => pre.clone(),
        };
        preacts.push(pre);
    }
    let loss = v
        .iter()
        .zip(target)
        .map(|(o, e)| (o - e) * (o - e))
        .sum::<f64>()
        / d as f64;

    // backward
    let mut delta: Vec<f64> = v
        .iter()
        .zip(target)
        .map(|(o, e)| 2.0 * (o - e) / d as f64)
        .collect();
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        if layer.act == Activation::Silu {
            for (dv, a) in delta.iter_mut().zip(&preacts[l]) {
                *dv *= silu_deriv(*a);
            }
        }
        let input = &inputs[l];
        let gw = &mut grads.weights[l];
        for o in 0..layer.out_dim {
            let dl = delta[o];
            grads.biases[l][o] += dl;
            let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (g, x) in row.iter_mut().zip(input) {
                *g += dl * x;
            }
        }
        if l > 0 {
            let mut dprev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let dl = delta[o];
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (dp, w) in dprev.iter_mut().zip(row) {
                    *dp += dl * w;
                }
            }
            delta = dprev;
        } else if let Condition::Class(c) = cond {
            let ce = model.class_embed_dim();
            let offset = layer.in_dim - ce;
            let mut dinput = vec![0.0; ce];
            for o in 0..layer.out_dim {
                let dl = delta[o];
                let row = &layer.weight[o * layer.in_dim + offset..(o + 1) * layer.in_dim];
                for (di, w) in dinput.iter_mut().zip(row) {
                    *di += dl * w;
                }
            }
            let base = c as usize * ce;
            for (g, di) in grads.class_embed[base..base + ce].iter_mut().zip(&dinput) {
                *g += di;
            }
        }
    }
    Ok(loss)
}

fn draw_pair<R: Rng>(
    data: &SampleBatch,
    sched: &NoiseSchedule,
    rng: &mut R,
    drop_cond: bool,
) -> (Vec<f64>, usize, Condition, Vec<f64>) {
    let idx = rng.gen_range(0..data.rows());
    let t = rng.gen_range(0..sched.num_steps());
    let eps: Vec<f64> = (0..data.cols())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut cond = data.condition_of(idx);
    if drop_cond && cond != Condition::Unconditional && rng.gen_bool(COND_DROP_PROB) {
        cond = Condition::Unconditional;
    }
    let ab = sched.alpha_bars()[t];
    let x_t: Vec<f64> = data
        .row(idx)
        .iter()
        .zip(&eps)
        .map(|(x0, e)| ab.sqrt() * x0 + (1.0 - ab).sqrt() * e)
        .collect();
    (x_t, t, cond, eps)
}

/// Mean epsilon-prediction loss over `n_pairs` seeded held-out draws.
pub fn epsilon_prediction_loss(
    model: &Denoiser,
    data: &SampleBatch,
    sched: &NoiseSchedule,
    seed: u64,
    n_pairs: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_pairs {
        let (x_t, t, cond, eps) = draw_pair(data, sched, &mut rng, false);
        let x = SampleBatch::new(1, data.cols(), x_t)?;
        let out = model.forward(&x, t, cond)?;
        total += out
            .data()
            .iter()
            .zip(&eps)
            .map(|(o, e)| (o - e) * (o - e))
            .sum::<f64>()
            / data.cols() as f64;
    }
    Ok(total / n_pairs as f64)
}

/// Trains a fresh denoiser on the dataset. Conditional when the data
/// carries class conditions. Deterministic under `cfg.seed`.
pub fn train_denoiser(
    data: &SampleBatch,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<Denoiser> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(Error::config("training data is empty"));
    }
    let num_classes = data
        .conditions()
        .map(|cs| {
            cs.iter()
                .map(|c| match c {
                    Condition::Class(k) => k + 1,
                    Condition::Unconditional => 0,
                })
                .max()
                .unwrap_or(0)
        })
        .unwrap_or(0);
    let mut model = Denoiser::init(data.cols(), num_classes, derive_seed(cfg.seed, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    for iter in 0..cfg.num_iterations {
        let mut grads = Gradients::zeros(&model);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let (x_t, t, cond, eps) = draw_pair(data, sched, &mut rng, true);
            batch_loss += accumulate_loss_and_grad(&model, &x_t, t, cond, &eps, &mut grads)?;
        }
        if !batch_loss.is_finite() {
            return Err(Error::numerical(format!(
                "training diverged at iteration {iter}: loss = {batch_loss}"
            )));
        }
        let step = cfg.learning_rate / cfg.batch_size as f64;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            for (w, g) in layer.weight.iter_mut().zip(&grads.weights[l]) {
                *w -= step * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grads.biases[l]) {
                *b -= step * g;
            }
        }
        for (e, g) in model.class_embed.iter_mut().zip(&grads.class_embed) {
            *e -= step * g;
        }
    }
    Ok(model)
}
