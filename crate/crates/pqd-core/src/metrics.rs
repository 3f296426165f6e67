//! Sample-quality metrics (sliced Wasserstein, MMD) and model-cost
//! accounting (size in bits, BOPs per denoising step).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{Condition, SampleBatch};
use crate::error::{Error, Result};
use crate::qmodel::{BitConfig, QuantizedModel};
use crate::sampler::{sample_trajectory, SamplerKind};
use crate::schedule::NoiseSchedule;
use crate::train::derive_seed;

/// Quality plus cost figures for one (model, bitwidth, strategy) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bit_config: BitConfig,
    pub size_bits: u64,
    pub bops_per_step: u64,
    pub sliced_wasserstein: f64,
    pub mmd: f64,
    pub mmd_bandwidth: f64,
    pub num_samples: usize,
    pub seed: u64,
}

/// 2-Wasserstein distance between two 1-D empirical distributions via
/// sorted quantiles.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let k = sa.len().max(sb.len());
    let mut acc = 0.0;
    for j in 0..k {
        let q = (j as f64 + 0.5) / k as f64;
        let qa = sa[((q * sa.len() as f64) as usize).min(sa.len() - 1)];
        let qb = sb[((q * sb.len() as f64) as usize).min(sb.len() - 1)];
        acc += (qa - qb) * (qa - qb);
    }
    (acc / k as f64).sqrt()
}

/// Mean over random unit projections of the 1-D 2-Wasserstein distance
/// between the projected point clouds.
pub fn sliced_wasserstein<R: Rng>(
    a: &SampleBatch,
    b: &SampleBatch,
    n_projections: usize,
    rng: &mut R,
) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::config("empty sample set"));
    }
    if a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "dimension mismatch: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    if n_projections == 0 {
        return Err(Error::config("n_projections must be >= 1"));
    }
    let d = a.cols();
    let mut total = 0.0;
    for _ in 0..n_projections {
        let mut u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            u = vec![1.0; 1]
                .into_iter()
                .chain(std::iter::repeat(0.0))
                .take(d)
                .collect();
        } else {
            for v in &mut u {
                *v /= norm;
            }
        }
        let proj = |s: &SampleBatch| -> Vec<f64> {
            (0..s.rows())
                .map(|i| s.row(i).iter().zip(&u).map(|(x, w)| x * w).sum())
                .collect()
        };
        total += wasserstein_1d(&proj(a), &proj(b));
    }
    Ok(total / n_projections as f64)
}

/// Unbiased MMD^2 estimate with a Gaussian kernel
/// `k(x, y) = exp(-||x - y||^2 / (2 bw^2))`, clamped at zero.
pub fn mmd_rbf(a: &SampleBatch, b: &SampleBatch, bandwidth: f64) -> Result<f64> {
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::config("mmd needs at least 2 samples per side"));
    }
    if a.cols() != b.cols() {
        return Err(Error::shape("dimension mismatch"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::config("bandwidth must be positive"));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |x: &[f64], y: &[f64]| -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        (-gamma * d2).exp()
    };
    let m = a.rows();
    let n = b.rows();
    let mut kxx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += k(a.row(i), a.row(j));
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kyy += k(b.row(i), b.row(j));
            }
        }
    }
    let mut kxy = 0.0;
    for i in 0..m {
        for j in 0..n {
            kxy += k(a.row(i), b.row(j));
        }
    }
    let mmd2 = kxx / (m * (m - 1)) as f64 + kyy / (n * (n - 1)) as f64
        - 2.0 * kxy / (m * n) as f64;
    Ok(mmd2.max(0.0))
}

/// Median pairwise distance over the pooled samples; falls back to 1
/// when the median is zero.
pub fn median_heuristic_bandwidth(a: &SampleBatch, b: &SampleBatch) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::shape("dimension mismatch"));
    }
    let rows: Vec<&[f64]> = (0..a.rows())
        .map(|i| a.row(i))
        .chain((0..b.rows()).map(|i| b.row(i)))
        .collect();
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let d2: f64 = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::config("need at least 2 pooled samples"));
    }
    dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let med = dists[dists.len() / 2];
    Ok(if med > 0.0 { med } else { 1.0 })
}

/// Storage overhead per quantized channel: 32-bit scale + 16-bit zero point.
const CHANNEL_OVERHEAD_BITS: u64 = 32 + 16;

/// Total parameter storage in bits: quantized weights at their bitwidth,
/// biases at 32 bits, plus per-channel quantization overhead.
pub fn model_size_bits(qmodel: &QuantizedModel) -> u64 {
    let wb = qmodel.bit_config.weight_bits as u64;
    let mut total = 0u64;
    for layer in &qmodel.base.layers {
        total += layer.weight.len() as u64 * wb;
        total += layer.bias.len() as u64 * 32;
        if wb != 32 {
            total += layer.out_dim as u64 * CHANNEL_OVERHEAD_BITS;
        }
    }
    total
}

/// Weight storage term alone (no biases, no overhead).
pub fn weight_term_bits(qmodel: &QuantizedModel) -> u64 {
    let wb = qmodel.bit_config.weight_bits as u64;
    qmodel
        .base
        .layers
        .iter()
        .map(|l| l.weight.len() as u64 * wb)
        .sum()
}

/// BOPs for one denoising step: per affine layer, MACs x weight bits x
/// activation bits, with unquantized factors counted at 32.
pub fn bops_per_step(qmodel: &QuantizedModel) -> u64 {
    let wb = qmodel.bit_config.weight_bits as u64;
    qmodel
        .base
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let ab = match qmodel.act_params[l] {
                Some(qp) => qp.bits as u64,
                None => 32,
            };
            (layer.in_dim * layer.out_dim) as u64 * wb * ab
        })
        .sum()
}

/// Generates samples with the deterministic DDIM sampler and scores them
/// against the reference set.
pub fn evaluate(
    qmodel: &QuantizedModel,
    sched: &NoiseSchedule,
    reference: &SampleBatch,
    n_samples: usize,
    n_projections: usize,
    num_inference_steps: usize,
    seed: u64,
) -> Result<EvalReport> {
    if reference.rows() == 0 {
        return Err(Error::config("reference set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let traj = sample_trajectory(
        qmodel,
        sched,
        SamplerKind::Ddim,
        num_inference_steps,
        n_samples,
        Condition::Unconditional,
        &mut rng,
        None,
    )?;
    let generated = traj.final_sample.expect("untruncated trajectory");
    let mut proj_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let sw = sliced_wasserstein(&generated, reference, n_projections, &mut proj_rng)?;
    let bw = median_heuristic_bandwidth(&generated, reference)?;
    let mmd = mmd_rbf(&generated, reference, bw)?;
    Ok(EvalReport {
        bit_config: qmodel.bit_config,
        size_bits: model_size_bits(qmodel),
        bops_per_step: bops_per_step(qmodel),
        sliced_wasserstein: sw,
        mmd,
        mmd_bandwidth: bw,
        num_samples: n_samples,
        seed,
    })
}
