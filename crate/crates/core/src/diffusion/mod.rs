//! Latent codec, noise schedules, reverse samplers and the associated losses.

mod codec;
mod sampler;
mod schedule;

pub use codec::{cmp_loss, fit_codec, fuse_condition, total_loss, LinearCodec, KL_VARIANCE_FLOOR};
pub use sampler::{
    analytic_gaussian_denoiser, ddim_step, ddpm_step, ddpm_step_strided, sample, timesteps, AnalyticGaussianDenoiser,
    ConditionPriorDenoiser, DdpmVariance, Denoiser, SamplerKind, SamplerOptions,
};
pub use schedule::{dm_loss, forward_sample, make_schedule, standard_normal, DiffusionSchedule};

/// Compressed feature map.
pub type Latent = crate::tensor::Tensor3;
