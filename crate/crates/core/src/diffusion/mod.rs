//! v-prediction diffusion: noise schedule, training objective, classifier-free
//! guidance, DDIM sampling and the training loop.

pub mod pipeline;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use pipeline::MotionModel;
pub use sampler::{
    combine_guidance, ddim_sample_latent, guided_velocity, standard_normal, SamplerOptions, VelocityModel,
};
pub use schedule::{
    add_noise, denoiser_loss, predict_eps, predict_x0, target_velocity, DiffusionSchedule, ScheduleConfig,
};
pub use train::{smoothed, StepRecord, TrainConfig, Trainer, TrainingBatch, TrainingCorpus, TrainingSample};
