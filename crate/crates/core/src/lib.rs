//! Effort-conditioned human motion diffusion at desk scale.
//!
//! The crate covers the whole pipeline: per-region effort metrics from
//! joint trajectories, pacing augmentation, a transformer denoiser whose
//! effort-metric attention lets motion latents query region-wise metric
//! tokens, v-prediction diffusion with DDIM sampling and classifier-free
//! guidance, and the effort-oriented evaluation suite.

pub mod augment;
pub mod diffusion;
pub mod effort;
pub mod error;
pub mod eval;
pub mod model;
pub mod motion;
pub mod nn;

pub use effort::{baseline_metrics, effort_metrics, EffortMetrics};
pub use error::{Error, Result};
pub use model::{ConditioningMode, Denoiser, DenoiserConfig, LatentCodec, LatentTensor};
pub use motion::{default_group_map, default_vocabulary, GroupMap, MotionSequence, PromptVocabulary};
