//! Chunked action diffusion: cosine schedule, clean-sample denoiser,
//! ancestral and fast samplers, conditioning stack with modality dropout.

mod conditioning;
mod policy;
mod schedule;
mod train;

pub use conditioning::{
    ConditioningStack, EncodeMode, Features, Keep, MaskProbs, StackConfig, PATCH_GRID,
};
pub use policy::{
    mse, ActionNormalizer, Draws, Example, LossOutput, Policy, PolicyConfig, PolicyKind, Sampler,
};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleKind};
pub use train::{fit, regression_baseline, train_policy, TrainConfig};
