//! A small time-conditioned epsilon-prediction MLP with optional class
//! conditioning.
//!
//! Architecture: sinusoidal time embedding (dim 32) and a learned class
//! embedding (dim 16, zero vector for the unconditional branch) are
//! concatenated to the input, followed by three SiLU hidden layers of
//! width 128 and a linear output layer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::{Condition, SampleBatch};
use crate::error::{Error, Result};
use crate::quant::QuantParams;
use crate::sampler::EpsModel;

pub const HIDDEN_DIM: usize = 128;
pub const NUM_HIDDEN: usize = 3;
pub const TIME_EMBED_DIM: usize = 32;
pub const CLASS_EMBED_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Identity,
}

#[inline]
fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// One affine layer; `weight` is `out_dim x in_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize, act: Activation) -> Self {
        Layer {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            act,
        }
    }

    pub(crate) fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(input) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Sinusoidal embedding of a step index; entries interleave
/// `sin(t * w_k), cos(t * w_k)` with geometric frequencies.
pub fn time_embedding(t: usize, dim: usize, t_total: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::config(format!("embedding dim {dim} must be even and positive")));
    }
    if t >= t_total {
        return Err(Error::config(format!("t {t} outside [0, {t_total})")));
    }
    Ok(sinusoidal(t, dim))
}

fn sinusoidal(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (10000.0f64).powf(-(k as f64) / half as f64);
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// What the forward engine should record, per batch row.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Capture {
    /// The post-nonlinearity output of the given affine layer.
    OutputOf(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub input_dim: usize,
    pub time_embed_dim: usize,
    pub num_classes: u32,
    /// `num_classes x class_embed_dim`, row-major; empty when unconditional.
    pub class_embed: Vec<f64>,
    pub layers: Vec<Layer>,
}

impl Denoiser {
    pub fn class_embed_dim(&self) -> usize {
        if self.num_classes > 0 {
            CLASS_EMBED_DIM
        } else {
            0
        }
    }

    fn layer_dims(
        input_dim: usize,
        hidden: usize,
        num_hidden: usize,
        time_embed_dim: usize,
        num_classes: u32,
    ) -> Vec<(usize, usize, Activation)> {
        let class_dim = if num_classes > 0 { CLASS_EMBED_DIM } else { 0 };
        let in0 = input_dim + time_embed_dim + class_dim;
        let mut dims = Vec::new();
        let mut prev = in0;
        for _ in 0..num_hidden {
            dims.push((prev, hidden, Activation::Silu));
            prev = hidden;
        }
        dims.push((prev, input_dim, Activation::Identity));
        dims
    }

    /// All-zero parameters (useful as a trivial baseline).
    pub fn zeros(input_dim: usize, num_classes: u32) -> Self {
        Self::zeros_with_arch(input_dim, HIDDEN_DIM, NUM_HIDDEN, TIME_EMBED_DIM, num_classes)
    }

    pub fn zeros_with_arch(
        input_dim: usize,
        hidden: usize,
        num_hidden: usize,
        time_embed_dim: usize,
        num_classes: u32,
    ) -> Self {
        let layers = Self::layer_dims(input_dim, hidden, num_hidden, time_embed_dim, num_classes)
            .into_iter()
            .map(|(i, o, a)| Layer::zeros(i, o, a))
            .collect();
        let class_dim = if num_classes > 0 { CLASS_EMBED_DIM } else { 0 };
        Denoiser {
            input_dim,
            time_embed_dim,
            num_classes,
            class_embed: vec![0.0; num_classes as usize * class_dim],
            layers,
        }
    }

    /// Seeded uniform He-style initialization.
    pub fn init(input_dim: usize, num_classes: u32, seed: u64) -> Self {
        Self::init_with_arch(input_dim, HIDDEN_DIM, NUM_HIDDEN, TIME_EMBED_DIM, num_classes, seed)
    }

    pub fn init_with_arch(
        input_dim: usize,
        hidden: usize,
        num_hidden: usize,
        time_embed_dim: usize,
        num_classes: u32,
        seed: u64,
    ) -> Self {
        let mut model =
            Self::zeros_with_arch(input_dim, hidden, num_hidden, time_embed_dim, num_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..bound);
            }
        }
        for e in &mut model.class_embed {
            *e = rng.gen_range(-0.5..0.5);
        }
        model
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum::<usize>()
            + self.class_embed.len()
    }

    pub fn check_condition(&self, cond: Condition) -> Result<()> {
        if let Condition::Class(c) = cond {
            if c >= self.num_classes {
                return Err(Error::config(format!(
                    "class id {c} outside [0, {})",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    /// Input vector for one sample: `[x, time_embed, class_embed]`.
    pub(crate) fn embed_input(&self, x: &[f64], t: usize, cond: Condition) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layers[0].in_dim);
        v.extend_from_slice(x);
        v.extend(sinusoidal(t, self.time_embed_dim));
        match cond {
            Condition::Unconditional => v.extend(std::iter::repeat(0.0).take(self.class_embed_dim())),
            Condition::Class(c) => {
                let d = self.class_embed_dim();
                v.extend_from_slice(&self.class_embed[c as usize * d..(c as usize + 1) * d]);
            }
        }
        v
    }

    /// Shared forward path. `act_params[l]`, when present and not dropped,
    /// fake-quantizes the input of affine layer `l`.
    pub(crate) fn forward_engine(
        &self,
        x: &SampleBatch,
        t: usize,
        cond: Condition,
        act_params: Option<&[Option<QuantParams>]>,
        drop_mask: Option<&[bool]>,
        capture: Option<Capture>,
    ) -> Result<(SampleBatch, Vec<Vec<f64>>)> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "input dim {} does not match model dim {}",
                x.cols(),
                self.input_dim
            )));
        }
        self.check_condition(cond)?;
        if let Some(ap) = act_params {
            if ap.len() != self.layers.len() {
                return Err(Error::shape("activation params length mismatch"));
            }
        }
        if let Some(m) = drop_mask {
            if m.len() != self.layers.len() {
                return Err(Error::shape(format!(
                    "drop mask length {} does not match layer count {}",
                    m.len(),
                    self.layers.len()
                )));
            }
        }
        let mut out = Vec::with_capacity(x.rows() * self.input_dim);
        let mut captured = Vec::new();
        let mut pre = Vec::new();
        for r in 0..x.rows() {
            let mut v = self.embed_input(x.row(r), t, cond);
            for (l, layer) in self.layers.iter().enumerate() {
                let dropped = drop_mask.is_some_and(|m| m[l]);
                if !dropped {
                    if let Some(Some(qp)) = act_params.map(|ap| &ap[l]) {
                        for e in &mut v {
                            *e = qp.qdq_scalar(*e);
                        }
                    }
                }
                layer.apply(&v, &mut pre);
                v = match layer.act {
                    Activation::Silu => pre.iter().map(|&a| silu(a)).collect(),
                    Activation::Identity => pre.clone(),
                };
                if let Some(Capture::OutputOf(cl)) = capture {
                    if cl == l {
                        captured.push(v.clone());
                    }
                }
            }
            out.extend_from_slice(&v);
        }
        Ok((SampleBatch::new(x.rows(), self.input_dim, out)?, captured))
    }

    /// Runs layers `0..layer` for a single sample and returns the raw
    /// input vector of `layer`, before that layer's own activation
    /// quantization. Earlier layers' inputs are fake-quantized with
    /// `act_params` unless dropped.
    pub(crate) fn input_of_layer(
        &self,
        x_row: &[f64],
        t: usize,
        cond: Condition,
        act_params: &[Option<QuantParams>],
        drop_mask: &[bool],
        layer: usize,
    ) -> Result<Vec<f64>> {
        self.check_condition(cond)?;
        let mut v = self.embed_input(x_row, t, cond);
        let mut pre = Vec::new();
        for (l, lyr) in self.layers.iter().take(layer).enumerate() {
            if !drop_mask.get(l).copied().unwrap_or(false) {
                if let Some(qp) = &act_params[l] {
                    for e in &mut v {
                        *e = qp.qdq_scalar(*e);
                    }
                }
            }
            lyr.apply(&v, &mut pre);
            v = match lyr.act {
                Activation::Silu => pre.iter().map(|&a| silu(a)).collect(),
                Activation::Identity => pre.clone(),
            };
        }
        Ok(v)
    }

    /// Full-precision epsilon prediction.
    pub fn forward(&self, x: &SampleBatch, t: usize, cond: Condition) -> Result<SampleBatch> {
        Ok(self.forward_engine(x, t, cond, None, None, None)?.0)
    }
}

impl EpsModel for Denoiser {
    fn predict_eps(&self, x_t: &SampleBatch, t: usize, cond: Condition) -> Result<SampleBatch> {
        self.forward(x_t, t, cond)
    }
    fn dim(&self) -> usize {
        self.input_dim
    }
}

/// Per-step summary of one layer's output over a recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ActivationStats {
    pub t: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub stddev: f64,
}

impl ActivationStats {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// Summarizes the chosen layer's output at every recorded step, in the
/// order the states are given (descending t for trajectories).
pub fn record_activation_stats(
    model: &Denoiser,
    states: &[(SampleBatch, usize)],
    layer: usize,
) -> Result<Vec<ActivationStats>> {
    if layer >= model.layers.len() {
        return Err(Error::config(format!(
            "layer index {layer} outside [0, {})",
            model.layers.len()
        )));
    }
    let mut rows = Vec::with_capacity(states.len());
    for (x, t) in states {
        let (_, captured) =
            model.forward_engine(x, *t, Condition::Unconditional, None, None, Some(Capture::OutputOf(layer)))?;
        let values: Vec<f64> = captured.into_iter().flatten().collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        rows.push(ActivationStats {
            t: *t,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean,
            stddev: var.sqrt(),
        });
    }
    Ok(rows)
}
