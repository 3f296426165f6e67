//! DDPM/DDIM reverse samplers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{Condition, SampleBatch};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Anything that predicts the noise component of `x_t`.
pub trait EpsModel {
    fn predict_eps(&self, x_t: &SampleBatch, t: usize, cond: Condition) -> Result<SampleBatch>;
    fn dim(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

fn check_eps(eps_hat: &SampleBatch) -> Result<()> {
    if !eps_hat.is_finite() {
        return Err(Error::numerical("predicted noise contains non-finite values"));
    }
    Ok(())
}

/// One stochastic ancestral reverse step:
/// `x_{t-1} = (x_t - beta_t/sqrt(1-alpha_bar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * z`,
/// with `sigma_t^2 = beta_t` and `z = 0` at `t = 0`.
pub fn ddpm_step<R: Rng>(
    eps_hat: &SampleBatch,
    x_t: &SampleBatch,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<SampleBatch> {
    sched.check_step(t)?;
    x_t.check_same_shape(eps_hat)?;
    check_eps(eps_hat)?;
    let beta = sched.betas()[t];
    let alpha = sched.alphas()[t];
    let ab = sched.alpha_bars()[t];
    let coeff = beta / (1.0 - ab).sqrt();
    let mean = x_t.scaled_add(1.0 / alpha.sqrt(), eps_hat, -coeff / alpha.sqrt())?;
    if t == 0 {
        return Ok(mean);
    }
    let sigma = beta.sqrt();
    let noise: Vec<f64> = (0..mean.rows() * mean.cols())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let z = SampleBatch::new(mean.rows(), mean.cols(), noise)?;
    mean.scaled_add(1.0, &z, sigma)
}

/// One deterministic DDIM step (eta = 0) from `t` down to `t_prev`.
///
/// `t_prev = -1` (passed as `None`) returns the predicted `x0`.
pub fn ddim_step(
    eps_hat: &SampleBatch,
    x_t: &SampleBatch,
    t: usize,
    t_prev: Option<usize>,
    sched: &NoiseSchedule,
) -> Result<SampleBatch> {
    sched.check_step(t)?;
    x_t.check_same_shape(eps_hat)?;
    check_eps(eps_hat)?;
    if let Some(p) = t_prev {
        if p >= t {
            return Err(Error::config(format!("t_prev {p} must be < t {t}")));
        }
    }
    let ab_t = sched.alpha_bars()[t];
    // x0_hat = (x_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t)
    let x0_hat = x_t.scaled_add(
        1.0 / ab_t.sqrt(),
        eps_hat,
        -(1.0 - ab_t).sqrt() / ab_t.sqrt(),
    )?;
    match t_prev {
        None => Ok(x0_hat),
        Some(p) => {
            let ab_p = sched.alpha_bars()[p];
            x0_hat.scaled_add(ab_p.sqrt(), eps_hat, (1.0 - ab_p).sqrt())
        }
    }
}

/// Evenly spaced descending DDIM step indices over `[0, T)`.
pub fn ddim_timesteps(num_steps: usize, num_inference_steps: usize) -> Result<Vec<usize>> {
    if num_inference_steps == 0 || num_inference_steps > num_steps {
        return Err(Error::config(format!(
            "num_inference_steps must be in [1, {num_steps}]"
        )));
    }
    let mut ts: Vec<usize> = (0..num_inference_steps)
        .map(|i| i * num_steps / num_inference_steps)
        .collect();
    ts.reverse();
    Ok(ts)
}

/// The recorded states of one reverse trajectory, in descending-t order.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `(x_t, t)` pairs, i.e. the network inputs at each visited step.
    pub states: Vec<(SampleBatch, usize)>,
    /// Output of the last reverse update; absent when the trajectory was
    /// truncated by `record_until`.
    pub final_sample: Option<SampleBatch>,
}

/// Runs a reverse trajectory from a fresh Gaussian `x_{T-1}` down to
/// `record_until` (default: all the way, including the final update).
pub fn sample_trajectory<R: Rng>(
    model: &dyn EpsModel,
    sched: &NoiseSchedule,
    sampler: SamplerKind,
    num_inference_steps: usize,
    batch: usize,
    cond: Condition,
    rng: &mut R,
    record_until: Option<usize>,
) -> Result<Trajectory> {
    let t_total = sched.num_steps();
    if let Some(r) = record_until {
        if r >= t_total {
            return Err(Error::config(format!(
                "record_until {r} outside [0, {t_total})"
            )));
        }
    }
    let steps = match sampler {
        SamplerKind::Ddim => ddim_timesteps(t_total, num_inference_steps)?,
        SamplerKind::Ddpm => {
            if num_inference_steps != t_total {
                return Err(Error::config(
                    "DDPM sampling requires num_inference_steps == num_steps",
                ));
            }
            (0..t_total).rev().collect()
        }
    };
    let dim = model.dim();
    let init: Vec<f64> = (0..batch * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut x = SampleBatch::new(batch, dim, init)?;
    let mut states = Vec::new();
    for (i, &t) in steps.iter().enumerate() {
        states.push((x.clone(), t));
        if record_until.is_some_and(|r| t <= r) {
            return Ok(Trajectory {
                states,
                final_sample: None,
            });
        }
        let eps_hat = model.predict_eps(&x, t, cond)?;
        x = match sampler {
            SamplerKind::Ddpm => ddpm_step(&eps_hat, &x, t, sched, rng)?,
            SamplerKind::Ddim => {
                let t_prev = steps.get(i + 1).copied();
                ddim_step(&eps_hat, &x, t, t_prev, sched)?
            }
        };
    }
    Ok(Trajectory {
        states,
        final_sample: Some(x),
    })
}
