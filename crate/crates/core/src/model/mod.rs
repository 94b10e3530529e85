//! The effort-guided skeleton-aware denoiser and its latent codec.

pub mod block;
pub mod codec;
pub mod config;
pub mod denoiser;
pub mod ema;

pub use block::DenoiserBlock;
pub use codec::{LatentCodec, LatentNorm};
pub use config::{ConditioningMode, DenoiserConfig};
pub use denoiser::{random_latents, Conditioning, Denoiser, ForwardCache, LatentTensor, TextEmbedding};
pub use ema::EmaAttention;

#[cfg(test)]
mod tests;
