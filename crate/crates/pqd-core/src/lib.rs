//! Training-free post-training quantization for small denoising
//! diffusion models, built around time-aware calibration: calibration
//! activations are harvested from partial reverse-process rollouts at
//! time steps drawn from a clamped normal law, so the quantizer sees
//! the same distribution shift across time that the deployed sampler
//! produces.

pub mod batch;
pub mod calib;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod gof;
pub mod io;
pub mod metrics;
pub mod qmodel;
pub mod quant;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use batch::{Condition, SampleBatch};
pub use calib::{
    build_calibration_set, build_calibration_set_with_law, calibrate_activations,
    calibrate_activations_minmax, pqd_quantize, quantize_from_set, CalibStrategy,
    CalibrationConfig, CalibrationSample, CalibrationSet, TimestepLaw,
};
pub use denoiser::{ActivationStats, Denoiser};
pub use error::{Error, Result};
pub use metrics::{
    bops_per_step, evaluate, median_heuristic_bandwidth, mmd_rbf, model_size_bits,
    sliced_wasserstein, wasserstein_1d, EvalReport,
};
pub use qmodel::{build_quantized_model, BitConfig, QuantizedModel, WeightStrategy};
pub use quant::{
    l2_optimal_params, minmax_params, quant_dequant, symmetric_params, QuantParams,
};
pub use sampler::{
    ddim_step, ddim_timesteps, ddpm_step, sample_trajectory, EpsModel, SamplerKind, Trajectory,
};
pub use schedule::{forward_diffuse, NoiseSchedule};
pub use train::{derive_seed, epsilon_prediction_loss, train_denoiser, TrainConfig};
