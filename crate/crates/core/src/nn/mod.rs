//! Dense numeric substrate: tensors, layers with hand-written backward
//! passes, attention, finite-difference gradient checks, checkpoints and the
//! optimizer.

pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use attention::{AttentionCache, AttentionGroup, AttentionOptions, MultiHeadAttention};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckReport, ProbeLoss};
pub use layers::{
    gelu, layer_norm, linear, sinusoidal_embedding, softmax, Dropout, FeedForward, Film, Init, LayerNorm, Linear,
    TimestepEmbedder, LAYER_NORM_EPS,
};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
