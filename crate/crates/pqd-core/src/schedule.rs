//! Noise schedules and the forward diffusion process.
//!
//! Time indexing convention: `t = 0` is the cleanest state (adjacent to
//! `x0`) and `t = T - 1` the noisiest.

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

/// Per-step beta/alpha tables plus the cumulative product `alpha_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule, inclusive of both endpoints.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::config("num_steps must be >= 1"));
        }
        if !beta_start.is_finite() || !beta_end.is_finite() {
            return Err(Error::config("beta endpoints must be finite"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = if num_steps == 1 {
            vec![beta_start]
        } else {
            (0..num_steps)
                .map(|i| {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                })
                .collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(num_steps);
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.num_steps() {
            return Err(Error::config(format!(
                "step index {t} out of range [0, {})",
                self.num_steps()
            )));
        }
        Ok(())
    }
}

/// `x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn forward_diffuse(
    x0: &SampleBatch,
    t: usize,
    eps: &SampleBatch,
    sched: &NoiseSchedule,
) -> Result<SampleBatch> {
    sched.check_step(t)?;
    x0.check_same_shape(eps)?;
    let ab = sched.alpha_bars()[t];
    x0.scaled_add(ab.sqrt(), eps, (1.0 - ab).sqrt())
}
