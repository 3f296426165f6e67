//! Fake-quantized denoiser: per-output-channel symmetric weight
//! quantization plus per-tensor asymmetric activation quantization on
//! each affine layer's input. Time/class embeddings and nonlinearities
//! stay full precision.

use serde::{Deserialize, Serialize};

use crate::batch::{Condition, SampleBatch};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::quant::{l2_optimal_params, quant_dequant, symmetric_params, QuantParams};
use crate::sampler::EpsModel;

/// Bitwidths in the WxAy convention; 32 disables quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitConfig {
    pub weight_bits: u8,
    pub act_bits: u8,
}

impl BitConfig {
    pub fn new(weight_bits: u8, act_bits: u8) -> Result<Self> {
        for b in [weight_bits, act_bits] {
            if b != 32 && !(2..=16).contains(&b) {
                return Err(Error::config(format!("bitwidth {b} must be 32 or in 2..=16")));
            }
        }
        Ok(BitConfig {
            weight_bits,
            act_bits,
        })
    }

    pub fn label(&self) -> String {
        format!("W{}A{}", self.weight_bits, self.act_bits)
    }
}

impl std::str::FromStr for BitConfig {
    type Err = Error;
    /// Parses "WxAy", e.g. "W8A8" or "8x8".
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase();
        let parts: Vec<&str> = norm
            .trim_start_matches('W')
            .split(['A', 'X'])
            .collect();
        if parts.len() != 2 {
            return Err(Error::config(format!("cannot parse bit config '{s}'")));
        }
        let w = parts[0]
            .parse::<u8>()
            .map_err(|_| Error::config(format!("bad weight bits in '{s}'")))?;
        let a = parts[1]
            .parse::<u8>()
            .map_err(|_| Error::config(format!("bad activation bits in '{s}'")))?;
        BitConfig::new(w, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightStrategy {
    MinMax,
    L2,
}

/// Clipping-ratio grid used when fitting weight channels with the L2
/// objective.
const WEIGHT_L2_GRID: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    /// Full-precision reference weights.
    pub base: Denoiser,
    /// Per-layer, per-output-channel weight params; empty at W32.
    pub weight_params: Vec<Vec<QuantParams>>,
    /// Per-layer input-activation params; None disables that layer.
    pub act_params: Vec<Option<QuantParams>>,
    pub bit_config: BitConfig,
    /// Base model with fake-quantized weights baked in.
    qnet: Denoiser,
}

/// Fits symmetric per-output-channel params for one weight matrix.
pub fn weight_channel_params(
    layer_weight: &[f64],
    in_dim: usize,
    out_dim: usize,
    bits: u8,
    strategy: WeightStrategy,
) -> Result<Vec<QuantParams>> {
    let mut params = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = layer_weight[o * in_dim..(o + 1) * in_dim].to_vec();
        let qp = match strategy {
            WeightStrategy::MinMax => {
                let maxabs = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                symmetric_params(maxabs, bits)?
            }
            WeightStrategy::L2 => l2_optimal_params(&[row.clone()], bits, true, WEIGHT_L2_GRID)?,
        };
        params.push(qp);
    }
    Ok(params)
}

/// Builds a fake-quantized model. `act_params` is required exactly when
/// `act_bits < 32` (activations need calibration data).
pub fn build_quantized_model(
    model: &Denoiser,
    weight_bits: u8,
    act_bits: u8,
    weight_strategy: WeightStrategy,
    act_params: Option<Vec<QuantParams>>,
) -> Result<QuantizedModel> {
    let bit_config = BitConfig::new(weight_bits, act_bits)?;
    let num_layers = model.layers.len();
    let act_params: Vec<Option<QuantParams>> = match (act_bits, act_params) {
        (32, None) => vec![None; num_layers],
        (32, Some(_)) => {
            return Err(Error::config("act_params given but act_bits = 32"));
        }
        (_, None) => {
            return Err(Error::config(
                "act_bits < 32 requires calibrated activation params",
            ));
        }
        (_, Some(ap)) => {
            if ap.len() != num_layers {
                return Err(Error::shape(format!(
                    "{} activation params for {} layers",
                    ap.len(),
                    num_layers
                )));
            }
            ap.into_iter().map(Some).collect()
        }
    };

    let mut weight_params = Vec::new();
    let mut qnet = model.clone();
    if weight_bits != 32 {
        for (layer, qlayer) in model.layers.iter().zip(&mut qnet.layers) {
            let params = weight_channel_params(
                &layer.weight,
                layer.in_dim,
                layer.out_dim,
                weight_bits,
                weight_strategy,
            )?;
            for (o, qp) in params.iter().enumerate() {
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                let qrow = quant_dequant(row, qp)?;
                qlayer.weight[o * layer.in_dim..(o + 1) * layer.in_dim].copy_from_slice(&qrow);
            }
            weight_params.push(params);
        }
    }

    Ok(QuantizedModel {
        base: model.clone(),
        weight_params,
        act_params,
        bit_config,
        qnet,
    })
}

impl QuantizedModel {
    /// Rebuilds a quantized model from explicit parameters (e.g. loaded
    /// from a file) instead of re-fitting them.
    pub fn from_parts(
        base: Denoiser,
        weight_params: Vec<Vec<QuantParams>>,
        act_params: Vec<Option<QuantParams>>,
        bit_config: BitConfig,
    ) -> Result<Self> {
        if act_params.len() != base.layers.len() {
            return Err(Error::shape("activation params length mismatch"));
        }
        let mut qnet = base.clone();
        if bit_config.weight_bits != 32 {
            if weight_params.len() != base.layers.len() {
                return Err(Error::shape("weight params length mismatch"));
            }
            for ((layer, qlayer), params) in base
                .layers
                .iter()
                .zip(qnet.layers.iter_mut())
                .zip(&weight_params)
            {
                if params.len() != layer.out_dim {
                    return Err(Error::shape("weight channel count mismatch"));
                }
                for (o, qp) in params.iter().enumerate() {
                    let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let qrow = quant_dequant(row, qp)?;
                    qlayer.weight[o * layer.in_dim..(o + 1) * layer.in_dim]
                        .copy_from_slice(&qrow);
                }
            }
        }
        Ok(QuantizedModel {
            base,
            weight_params,
            act_params,
            bit_config,
            qnet,
        })
    }

    /// The denoiser with fake-quantized weights (activations not applied).
    pub fn weight_quantized_net(&self) -> &Denoiser {
        &self.qnet
    }

    pub fn num_layers(&self) -> usize {
        self.qnet.layers.len()
    }

    /// Forward pass under the configured fake quantization. A `true`
    /// entry in `act_drop_mask` bypasses that layer's activation
    /// quantization for this call (QDrop's randomized dropping during
    /// calibration); deployment passes no mask.
    pub fn forward(
        &self,
        x_t: &SampleBatch,
        t: usize,
        cond: Condition,
        act_drop_mask: Option<&[bool]>,
    ) -> Result<SampleBatch> {
        Ok(self
            .qnet
            .forward_engine(x_t, t, cond, Some(&self.act_params), act_drop_mask, None)?
            .0)
    }
}

impl EpsModel for QuantizedModel {
    fn predict_eps(&self, x_t: &SampleBatch, t: usize, cond: Condition) -> Result<SampleBatch> {
        self.forward(x_t, t, cond, None)
    }
    fn dim(&self) -> usize {
        self.qnet.input_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Denoiser {
        Denoiser::init_with_arch(2, 16, 2, 8, 0, 77)
    }

    #[test]
    fn identity_configuration_is_bit_identical() {
        let m = model();
        let qm = build_quantized_model(&m, 32, 32, WeightStrategy::MinMax, None).unwrap();
        let x = SampleBatch::new(2, 2, vec![0.4, -1.0, 2.0, 0.0]).unwrap();
        let a = m.forward(&x, 3, Condition::Unconditional).unwrap();
        let b = qm.forward(&x, 3, Condition::Unconditional, None).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn weight_reconstruction_bounded_by_half_scale() {
        let m = model();
        let qm = build_quantized_model(&m, 8, 32, WeightStrategy::MinMax, None).unwrap();
        for (l, layer) in m.layers.iter().enumerate() {
            for o in 0..layer.out_dim {
                let qp = &qm.weight_params[l][o];
                for i in 0..layer.in_dim {
                    let w = layer.weight[o * layer.in_dim + i];
                    let qw = qm.qnet.layers[l].weight[o * layer.in_dim + i];
                    assert!((w - qw).abs() <= qp.scale / 2.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn lower_weight_bits_mean_larger_error() {
        let m = model();
        let err = |bits| {
            let qm = build_quantized_model(&m, bits, 32, WeightStrategy::MinMax, None).unwrap();
            let mut total = 0.0;
            let mut n = 0;
            for (l, layer) in m.layers.iter().enumerate() {
                for (w, qw) in layer.weight.iter().zip(&qm.qnet.layers[l].weight) {
                    total += (w - qw).abs();
                    n += 1;
                }
            }
            total / n as f64
        };
        assert!(err(4) > err(8));
    }

    #[test]
    fn act_params_requirement() {
        let m = model();
        assert!(build_quantized_model(&m, 8, 8, WeightStrategy::MinMax, None).is_err());
        assert!(build_quantized_model(&m, 32, 32, WeightStrategy::MinMax, Some(vec![])).is_err());
    }

    #[test]
    fn all_drop_mask_with_fp_weights_equals_base() {
        let m = model();
        let ap: Vec<QuantParams> = (0..m.layers.len())
            .map(|_| QuantParams::new(0.05, 0, 8, false).unwrap())
            .collect();
        let qm = build_quantized_model(&m, 32, 8, WeightStrategy::MinMax, Some(ap)).unwrap();
        let x = SampleBatch::new(1, 2, vec![0.3, -0.3]).unwrap();
        let mask = vec![true; qm.num_layers()];
        let a = m.forward(&x, 1, Condition::Unconditional).unwrap();
        let b = qm.forward(&x, 1, Condition::Unconditional, Some(&mask)).unwrap();
        assert_eq!(a.data(), b.data());
        // same mask twice is deterministic
        let c = qm.forward(&x, 1, Condition::Unconditional, Some(&mask)).unwrap();
        assert_eq!(b.data(), c.data());
        // wrong mask length rejected
        assert!(qm
            .forward(&x, 1, Condition::Unconditional, Some(&[true]))
            .is_err());
    }

    #[test]
    fn bit_config_parsing() {
        assert_eq!(
            "W8A8".parse::<BitConfig>().unwrap(),
            BitConfig::new(8, 8).unwrap()
        );
        assert_eq!(
            "4x32".parse::<BitConfig>().unwrap(),
            BitConfig::new(4, 32).unwrap()
        );
        assert!("W8".parse::<BitConfig>().is_err());
        assert!("W99A8".parse::<BitConfig>().is_err());
    }
}
