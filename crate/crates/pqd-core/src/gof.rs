//! Goodness-of-fit helpers for the calibration time-step law.
//!
//! The discrete law under test is `clamp(floor(Normal(mu, sigma) * T))`
//! over `[0, T)`. The reference pmf is computed from erf-based normal
//! CDF differences, a path that shares nothing with the ziggurat
//! sampler used to draw time steps.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Exact pmf of the clamped floored normal over `0..num_steps`, in
/// normalized time units (the draw is scaled by `num_steps` before
/// flooring). Entry `t` is P(T = t); the clamp folds the tail mass
/// below 0 into the first bin and the mass at and above 1 into the
/// last.
pub fn clamped_floored_normal_pmf(mu: f64, sigma: f64, num_steps: usize) -> Result<Vec<f64>> {
    if num_steps == 0 || sigma <= 0.0 || !mu.is_finite() || !sigma.is_finite() {
        return Err(Error::config("pmf needs num_steps >= 1 and sigma > 0"));
    }
    let n = Normal::new(mu, sigma)
        .map_err(|e| Error::numerical(format!("normal law: {e}")))?;
    let steps = num_steps as f64;
    let mut pmf = Vec::with_capacity(num_steps);
    for t in 0..num_steps {
        let lo = if t == 0 {
            0.0
        } else {
            n.cdf(t as f64 / steps)
        };
        let hi = if t + 1 == num_steps {
            1.0
        } else {
            n.cdf((t + 1) as f64 / steps)
        };
        pmf.push((hi - lo).max(0.0));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::numerical(format!("pmf mass {total} not ~1")));
    }
    for p in &mut pmf {
        *p /= total;
    }
    Ok(pmf)
}

/// Pearson chi-square goodness-of-fit p-value for observed counts
/// against expected probabilities, pooling adjacent bins until every
/// expected count is at least 5. Returns (statistic, degrees of
/// freedom, p).
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> Result<(f64, usize, f64)> {
    if observed.len() != expected_probs.len() || observed.is_empty() {
        return Err(Error::shape("observed/expected length mismatch"));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(Error::config("no observations"));
    }
    let mut pooled: Vec<(f64, f64)> = Vec::new(); // (obs, exp)
    let mut acc_obs = 0.0;
    let mut acc_exp = 0.0;
    for (&o, &p) in observed.iter().zip(expected_probs) {
        acc_obs += o as f64;
        acc_exp += p * n as f64;
        if acc_exp >= 5.0 {
            pooled.push((acc_obs, acc_exp));
            acc_obs = 0.0;
            acc_exp = 0.0;
        }
    }
    if acc_exp > 0.0 || acc_obs > 0.0 {
        if let Some(last) = pooled.last_mut() {
            last.0 += acc_obs;
            last.1 += acc_exp;
        } else {
            return Err(Error::numerical("all expected mass below pooling floor"));
        }
    }
    if pooled.len() < 2 {
        return Err(Error::numerical("fewer than 2 pooled bins"));
    }
    let stat: f64 = pooled.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = pooled.len() - 1;
    let chi = ChiSquared::new(dof as f64)
        .map_err(|e| Error::numerical(format!("chi-square dof: {e}")))?;
    let p = 1.0 - chi.cdf(stat);
    Ok((stat, dof, p))
}
