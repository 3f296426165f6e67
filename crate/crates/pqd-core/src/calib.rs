//! Time-aware calibration: calibration-set construction with normally
//! distributed denoising time steps, and QDrop-style calibration of
//! activation quantization parameters.
//!
//! mu and sigma are in normalized time units (fractions of the
//! trajectory, 0 = clean): the raw draw is `Normal(mu, sigma) * T`,
//! floored and clamped into `[0, T - 1]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::batch::Condition;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::qmodel::{build_quantized_model, QuantizedModel, WeightStrategy};
use crate::quant::{l2_optimal_params, params_for_range, QuantParams};
use crate::sampler::{sample_trajectory, SamplerKind};
use crate::schedule::NoiseSchedule;
use crate::train::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Calibration set size (number of drawn indices).
    pub n: usize,
    /// Normalized time mean.
    pub mu: f64,
    /// Normalized time stddev.
    pub sigma: f64,
    /// Denoising steps T of the schedule this config targets.
    pub num_steps: usize,
    pub sampler: SamplerKind,
    pub num_inference_steps: usize,
    pub seed: u64,
    /// QDrop bypass probability during activation calibration.
    pub drop_prob: f64,
    /// Clipping-ratio grid for the L2 range search.
    pub grid_size: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            n: 5120,
            mu: 0.4,
            sigma: 0.4,
            num_steps: 250,
            sampler: SamplerKind::Ddim,
            num_inference_steps: 250,
            seed: 0,
            drop_prob: 0.5,
            grid_size: 64,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self, num_steps: usize) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("calibration.n must be >= 1"));
        }
        if self.num_steps != num_steps {
            return Err(Error::config(format!(
                "calibration.num_steps {} does not match the schedule's {num_steps}",
                self.num_steps
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("calibration.sigma must be > 0"));
        }
        if !self.mu.is_finite() {
            return Err(Error::config("calibration.mu must be finite"));
        }
        if self.num_inference_steps == 0 || self.num_inference_steps > num_steps {
            return Err(Error::config(format!(
                "calibration.num_inference_steps must be in [1, {num_steps}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::config("calibration.drop_prob must be in [0, 1]"));
        }
        if self.grid_size == 0 {
            return Err(Error::config("calibration.grid_size must be >= 1"));
        }
        Ok(())
    }
}

/// One intermediate denoising state recorded from a full-precision
/// trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    pub x: Vec<f64>,
    pub t: usize,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub samples: Vec<CalibrationSample>,
    pub config: CalibrationConfig,
    pub dim: usize,
    /// Paired conditional/unconditional mode (2 entries per index).
    pub conditional: bool,
}

impl CalibrationSet {
    /// Checks the paired layout: even/odd entries share x and t bitwise
    /// and differ only in condition.
    pub fn validate_pairing(&self) -> Result<()> {
        if !self.conditional {
            return Ok(());
        }
        if self.samples.len() % 2 != 0 {
            return Err(Error::config("conditional set has odd length"));
        }
        for pair in self.samples.chunks(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.x != b.x || a.t != b.t {
                return Err(Error::config("conditional pair does not share x and t"));
            }
            if !matches!(a.condition, Condition::Class(_))
                || b.condition != Condition::Unconditional
            {
                return Err(Error::config("conditional pair has wrong conditions"));
            }
        }
        Ok(())
    }

    /// Histogram of recorded time steps over `bins` equal-width bins of
    /// `[0, num_steps)`.
    pub fn timestep_histogram(&self, num_steps: usize, bins: usize) -> Vec<usize> {
        let mut hist = vec![0usize; bins];
        for s in &self.samples {
            let b = (s.t * bins / num_steps).min(bins - 1);
            hist[b] += 1;
        }
        hist
    }
}

/// How calibration time steps are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimestepLaw {
    /// The time-aware law: floor(Normal(mu, sigma) * T), clamped.
    Normal { mu: f64, sigma: f64 },
    /// Uniform over [0, T).
    Uniform,
    /// Always T - 1 (pure-noise calibration).
    LastStep,
}

/// Draws `floor(Normal(mu, sigma) * T)` clamped into `[0, T - 1]`.
pub fn sample_timestep<R: Rng>(rng: &mut R, mu: f64, sigma: f64, num_steps: usize) -> Result<usize> {
    if num_steps == 0 {
        return Err(Error::config("num_steps must be >= 1"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config("sigma must be > 0"));
    }
    let normal =
        Normal::new(mu, sigma).map_err(|e| Error::config(format!("bad normal params: {e}")))?;
    let raw: f64 = normal.sample(rng);
    Ok(clamp_floored(raw, num_steps))
}

/// floor(raw * T) clamped into [0, T - 1].
pub fn clamp_floored(raw: f64, num_steps: usize) -> usize {
    let t = (raw * num_steps as f64).floor();
    t.clamp(0.0, (num_steps - 1) as f64) as usize
}

fn draw_step<R: Rng>(rng: &mut R, law: TimestepLaw, num_steps: usize) -> Result<usize> {
    match law {
        TimestepLaw::Normal { mu, sigma } => sample_timestep(rng, mu, sigma, num_steps),
        TimestepLaw::Uniform => Ok(rng.gen_range(0..num_steps)),
        TimestepLaw::LastStep => Ok(num_steps - 1),
    }
}

/// Builds a calibration set by rolling the full-precision sampler from a
/// fresh Gaussian down to each drawn time step.
/// In conditional mode each index yields a (class, unconditional) pair
/// sharing x and t; conditions are assigned round-robin.
pub fn build_calibration_set_with_law(
    model: &Denoiser,
    sched: &NoiseSchedule,
    cfg: &CalibrationConfig,
    law: TimestepLaw,
    conditions: Option<&[u32]>,
) -> Result<CalibrationSet> {
    cfg.validate(sched.num_steps())?;
    if let Some(cs) = conditions {
        if cs.is_empty() {
            return Err(Error::config("conditions list is empty"));
        }
        if model.num_classes == 0 {
            return Err(Error::config(
                "conditional calibration requires a class-conditional model",
            ));
        }
        for &c in cs {
            if c >= model.num_classes {
                return Err(Error::config(format!(
                    "condition {c} outside [0, {})",
                    model.num_classes
                )));
            }
        }
    }
    let mut samples = Vec::with_capacity(if conditions.is_some() { 2 * cfg.n } else { cfg.n });
    for i in 0..cfg.n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        let target = draw_step(&mut rng, law, sched.num_steps())?;
        let cond = match conditions {
            Some(cs) => Condition::Class(cs[i % cs.len()]),
            None => Condition::Unconditional,
        };
        let traj = sample_trajectory(
            model,
            sched,
            cfg.sampler,
            cfg.num_inference_steps,
            1,
            cond,
            &mut rng,
            Some(target),
        )
        .map_err(|e| Error::numerical(format!("calibration rollout {i} failed: {e}")))?;
        let (state, t) = traj
            .states
            .last()
            .ok_or_else(|| Error::numerical(format!("calibration rollout {i} recorded nothing")))?;
        let x = state.row(0).to_vec();
        match cond {
            Condition::Unconditional => samples.push(CalibrationSample {
                x,
                t: *t,
                condition: cond,
            }),
            Condition::Class(_) => {
                samples.push(CalibrationSample {
                    x: x.clone(),
                    t: *t,
                    condition: cond,
                });
                samples.push(CalibrationSample {
                    x,
                    t: *t,
                    condition: Condition::Unconditional,
                });
            }
        }
    }
    Ok(CalibrationSet {
        samples,
        config: *cfg,
        dim: model.input_dim,
        conditional: conditions.is_some(),
    })
}

/// Trajectory-state collection with the normal time-step law from the
/// config.
pub fn build_calibration_set(
    model: &Denoiser,
    sched: &NoiseSchedule,
    cfg: &CalibrationConfig,
    conditions: Option<&[u32]>,
) -> Result<CalibrationSet> {
    build_calibration_set_with_law(
        model,
        sched,
        cfg,
        TimestepLaw::Normal {
            mu: cfg.mu,
            sigma: cfg.sigma,
        },
        conditions,
    )
}

/// Layer-sequential QDrop calibration of per-layer activation params.
///
/// For each layer in forward order, every calibration sample is pushed
/// through the weight-quantized model with earlier layers' activations
/// fake-quantized by their already-fixed params -- except each layer is
/// independently bypassed with probability `drop_prob` per sample -- and
/// that layer's input activations are fitted with the L2 range search.
pub fn calibrate_activations<R: Rng>(
    wq_model: &QuantizedModel,
    calib: &CalibrationSet,
    act_bits: u8,
    drop_prob: f64,
    grid_size: usize,
    rng: &mut R,
) -> Result<Vec<QuantParams>> {
    if act_bits == 32 {
        return Err(Error::config("act_bits = 32: nothing to calibrate"));
    }
    if calib.samples.is_empty() {
        return Err(Error::config("calibration set is empty"));
    }
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(Error::config("drop_prob must be in [0, 1]"));
    }
    let net = wq_model.weight_quantized_net();
    let num_layers = net.layers.len();
    let mut fitted: Vec<Option<QuantParams>> = vec![None; num_layers];
    for layer in 0..num_layers {
        let mut collected = Vec::with_capacity(calib.samples.len());
        for s in &calib.samples {
            let mask: Vec<bool> = (0..layer).map(|_| rng.gen_bool(drop_prob)).collect();
            collected.push(net.input_of_layer(&s.x, s.t, s.condition, &fitted, &mask, layer)?);
        }
        fitted[layer] = Some(l2_optimal_params(&collected, act_bits, false, grid_size)?);
    }
    Ok(fitted.into_iter().map(|p| p.expect("fitted")).collect())
}

/// Naive baseline: per-layer min/max ranges of full-precision activation
/// statistics, no QDrop, no clipping search.
pub fn calibrate_activations_minmax(
    wq_model: &QuantizedModel,
    calib: &CalibrationSet,
    act_bits: u8,
) -> Result<Vec<QuantParams>> {
    if act_bits == 32 {
        return Err(Error::config("act_bits = 32: nothing to calibrate"));
    }
    if calib.samples.is_empty() {
        return Err(Error::config("calibration set is empty"));
    }
    let net = wq_model.weight_quantized_net();
    let num_layers = net.layers.len();
    let none: Vec<Option<QuantParams>> = vec![None; num_layers];
    let mut params = Vec::with_capacity(num_layers);
    for layer in 0..num_layers {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &calib.samples {
            let v = net.input_of_layer(&s.x, s.t, s.condition, &none, &[], layer)?;
            for e in v {
                lo = lo.min(e);
                hi = hi.max(e);
            }
        }
        params.push(params_for_range(lo, hi, act_bits, false)?);
    }
    Ok(params)
}

/// The four calibration strategies exposed by the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibStrategy {
    /// Time-aware normal law + QDrop + L2 range search.
    PqdNormal,
    /// Uniform time steps + QDrop + L2 range search.
    UniformT,
    /// All samples at t = T - 1 + QDrop + L2 range search.
    LastStepOnly,
    /// The naive-practitioner baseline: calibration inputs taken only
    /// at the noise end of the trajectory, min/max ranges, min/max
    /// weights, no QDrop.
    MinmaxNaive,
}

impl CalibStrategy {
    pub fn timestep_law(&self, mu: f64, sigma: f64) -> TimestepLaw {
        match self {
            CalibStrategy::PqdNormal => TimestepLaw::Normal { mu, sigma },
            CalibStrategy::UniformT => TimestepLaw::Uniform,
            CalibStrategy::LastStepOnly | CalibStrategy::MinmaxNaive => TimestepLaw::LastStep,
        }
    }

    pub fn weight_strategy(&self) -> WeightStrategy {
        match self {
            CalibStrategy::MinmaxNaive => WeightStrategy::MinMax,
            _ => WeightStrategy::L2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CalibStrategy::PqdNormal => "pqd-normal",
            CalibStrategy::UniformT => "uniform-t",
            CalibStrategy::LastStepOnly => "last-step-only",
            CalibStrategy::MinmaxNaive => "minmax-naive",
        }
    }
}

impl std::str::FromStr for CalibStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pqd-normal" => Ok(CalibStrategy::PqdNormal),
            "uniform-t" => Ok(CalibStrategy::UniformT),
            "last-step-only" => Ok(CalibStrategy::LastStepOnly),
            "minmax-naive" => Ok(CalibStrategy::MinmaxNaive),
            other => Err(Error::config(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Quantizes a model against an existing calibration set.
pub fn quantize_from_set(
    model: &Denoiser,
    calib: &CalibrationSet,
    weight_bits: u8,
    act_bits: u8,
    strategy: CalibStrategy,
) -> Result<QuantizedModel> {
    let wq = build_quantized_model(model, weight_bits, 32, strategy.weight_strategy(), None)?;
    let act_params = if act_bits == 32 {
        None
    } else {
        Some(match strategy {
            CalibStrategy::MinmaxNaive => calibrate_activations_minmax(&wq, calib, act_bits)?,
            _ => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(calib.config.seed, 0xAC7));
                calibrate_activations(
                    &wq,
                    calib,
                    act_bits,
                    calib.config.drop_prob,
                    calib.config.grid_size,
                    &mut rng,
                )?
            }
        })
    };
    build_quantized_model(model, weight_bits, act_bits, strategy.weight_strategy(), act_params)
}

/// End-to-end PQD pipeline: time-aware calibration set, per-channel
/// weight quantization, QDrop activation calibration.
pub fn pqd_quantize(
    model: &Denoiser,
    sched: &NoiseSchedule,
    cfg: &CalibrationConfig,
    weight_bits: u8,
    act_bits: u8,
    conditions: Option<&[u32]>,
) -> Result<(QuantizedModel, CalibrationSet)> {
    let calib = build_calibration_set(model, sched, cfg, conditions)
        .map_err(|e| Error::config(format!("calibration stage: {e}")))?;
    let qm = quantize_from_set(model, &calib, weight_bits, act_bits, CalibStrategy::PqdNormal)
        .map_err(|e| Error::config(format!("quantization stage: {e}")))?;
    Ok((qm, calib))
}
