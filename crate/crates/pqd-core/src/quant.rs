//! Uniform affine fake-quantization and range calibration.
//!
//! The simulated quantizer is
//! `qdq(x) = s * (clamp(round(x / s) + z, q_min, q_max) - z)`
//! with round-half-away-from-zero. This is the standard uniform affine
//! form; a literal clamp without rounding would be lossless inside the
//! range and could not express a bitwidth budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale, zero point and clamp bounds for one tensor (or channel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub bits: u8,
    pub signed: bool,
    pub q_min: i32,
    pub q_max: i32,
}

/// Integer grid bounds for a bitwidth.
pub fn quant_range(bits: u8, signed: bool) -> (i32, i32) {
    if signed {
        (-(1 << (bits - 1)), (1 << (bits - 1)) - 1)
    } else {
        (0, (1 << bits) - 1)
    }
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i32, bits: u8, signed: bool) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return Err(Error::config(format!("bitwidth {bits} outside 2..=16")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config(format!("scale must be positive, got {scale}")));
        }
        let (q_min, q_max) = quant_range(bits, signed);
        if zero_point < q_min || zero_point > q_max {
            return Err(Error::config(format!(
                "zero point {zero_point} outside [{q_min}, {q_max}]"
            )));
        }
        Ok(QuantParams {
            scale,
            zero_point,
            bits,
            signed,
            q_min,
            q_max,
        })
    }

    #[inline]
    pub fn qdq_scalar(&self, x: f64) -> f64 {
        // f64::round is round-half-away-from-zero
        let q = (x / self.scale).round() + self.zero_point as f64;
        let q = q.clamp(self.q_min as f64, self.q_max as f64);
        self.scale * (q - self.zero_point as f64)
    }
}

/// Quantize-dequantize a tensor elementwise.
pub fn quant_dequant(x: &[f64], qp: &QuantParams) -> Result<Vec<f64>> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("quant_dequant input contains non-finite values"));
    }
    Ok(x.iter().map(|&v| qp.qdq_scalar(v)).collect())
}

fn minmax_of(x: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::config("empty tensor"));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("non-finite values in calibration tensor"));
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Constant tensors get s = 1 with the zero point placing the constant
/// on-grid where the range allows.
fn degenerate_params(c: f64, bits: u8, signed: bool) -> Result<QuantParams> {
    let (q_min, q_max) = quant_range(bits, signed);
    let z = (-c.round()).clamp(q_min as f64, q_max as f64) as i32;
    let candidate = QuantParams::new(1.0, z, bits, signed)?;
    if c == 0.0 || candidate.qdq_scalar(c) == c.round() {
        return Ok(candidate);
    }
    // |c| too large for s = 1: scale so c maps to a grid extreme
    let (scale, z) = if c > 0.0 {
        (c / q_max as f64, 0)
    } else if signed {
        (c / q_min as f64, 0)
    } else {
        (-c / q_max as f64, q_max)
    };
    QuantParams::new(scale, z, bits, signed)
}

/// Naive linear quantization range: s = (max - min) / (2^b - 1), zero
/// point chosen so min maps to q_min.
pub fn minmax_params(x: &[f64], bits: u8, signed: bool) -> Result<QuantParams> {
    let (lo, hi) = minmax_of(x)?;
    params_for_range(lo, hi, bits, signed)
}

/// Affine params covering [lo, hi].
pub fn params_for_range(lo: f64, hi: f64, bits: u8, signed: bool) -> Result<QuantParams> {
    if hi <= lo {
        return degenerate_params(lo, bits, signed);
    }
    let (q_min, q_max) = quant_range(bits, signed);
    let levels = (q_max - q_min) as f64;
    let scale = (hi - lo) / levels;
    let z = (q_min as f64 - lo / scale)
        .round()
        .clamp(q_min as f64, q_max as f64) as i32;
    QuantParams::new(scale, z, bits, signed)
}

/// Symmetric params (z = 0) covering [-maxabs, maxabs].
pub fn symmetric_params(maxabs: f64, bits: u8) -> Result<QuantParams> {
    if maxabs <= 0.0 {
        return degenerate_params(0.0, bits, true);
    }
    let (_, q_max) = quant_range(bits, true);
    QuantParams::new(maxabs / q_max as f64, 0, bits, true)
}

/// Total squared reconstruction error of qp over the samples.
pub fn l2_error(samples: &[Vec<f64>], qp: &QuantParams) -> f64 {
    samples
        .iter()
        .flat_map(|s| s.iter())
        .map(|&v| {
            let d = v - qp.qdq_scalar(v);
            d * d
        })
        .sum()
}

/// Grid search over clipping ratios rho in {1/grid_size, ..., 1},
/// selecting the rho minimizing the summed L2 reconstruction error.
/// Ties break toward the smallest clipping ratio. For signed tensors the
/// candidates are symmetric (z = 0); for unsigned the clipped [min, max]
/// range is used. The rho = 1 min/max range is always included so the
/// result never loses to `minmax_params`.
pub fn l2_optimal_params(
    samples: &[Vec<f64>],
    bits: u8,
    signed: bool,
    grid_size: usize,
) -> Result<QuantParams> {
    if samples.is_empty() || samples.iter().all(|s| s.is_empty()) {
        return Err(Error::config("empty calibration sample list"));
    }
    if grid_size == 0 {
        return Err(Error::config("grid_size must be >= 1"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in samples {
        let (l, h) = minmax_of(s)?;
        lo = lo.min(l);
        hi = hi.max(h);
    }
    let maxabs = lo.abs().max(hi.abs());
    if maxabs == 0.0 || hi <= lo {
        return degenerate_params(lo, bits, signed);
    }

    let mut best: Option<(f64, QuantParams)> = None;
    let mut consider = |qp: QuantParams| {
        let err = l2_error(samples, &qp);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, qp));
        }
    };
    for k in 1..=grid_size {
        let rho = k as f64 / grid_size as f64;
        let qp = if signed {
            symmetric_params(rho * maxabs, bits)?
        } else {
            params_for_range(rho * lo, rho * hi, bits, signed)?
        };
        consider(qp);
    }
    if signed {
        // asymmetric fallback keeps the dominance guarantee on skewed data
        consider(params_for_range(lo, hi, bits, signed)?);
    }
    Ok(best.expect("non-empty candidate set").1)
}
