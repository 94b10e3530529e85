//! Effort-metric attention: motion latents query key/value tokens built from
//! the per-region effort metrics.
//!
//! In region mode each region's `(peak, collective)` pair is projected to a
//! `D`-dimensional token, the learned region-identity row is added, and the
//! tokens are layer-normalised before the key/value projections. The
//! softmax runs over the region tokens for every latent query. Global mode
//! flattens all metrics into one token without region identities.

use rand::{Rng, RngCore};

use super::config::{ConditioningMode, DenoiserConfig};
use crate::effort::EffortMetrics;
use crate::error::{Error, Result};
use crate::nn::attention::{AttentionCache, AttentionGroup, AttentionOptions, MultiHeadAttention};
use crate::nn::layers::{Dropout, Init, LayerNorm, LayerNormCache, Linear};
use crate::nn::params::{Gradients, ParamId, ParamStore};
use crate::nn::Tensor;

#[derive(Debug, Clone)]
pub struct EmaAttention {
    pub mode: ConditioningMode,
    pub metric_proj: Linear,
    /// `[N_g, D]` region-identity embedding (region mode only).
    pub region_id: Option<ParamId>,
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub dropout: Dropout,
    regions: usize,
    metric_scale: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct EmaCache {
    metric_in: Tensor,
    norm: LayerNormCache,
    attn: AttentionCache,
}

impl EmaCache {
    pub fn attention(&self) -> &AttentionCache {
        &self.attn
    }
}

impl EmaAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &DenoiserConfig,
        out_init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = cfg.latent_dim;
        let (in_dim, region_id) = match cfg.conditioning_mode {
            ConditioningMode::Region => {
                let table = crate::nn::params::fan_in_uniform(&[cfg.regions, d], d, rng);
                (
                    cfg.metrics_per_region,
                    Some(store.add(format!("{name}.region_id"), table)),
                )
            }
            ConditioningMode::Global => (cfg.regions * cfg.metrics_per_region, None),
        };
        Ok(Self {
            mode: cfg.conditioning_mode,
            metric_proj: Linear::new(store, &format!("{name}.metric_proj"), in_dim, d, Init::FanIn, rng),
            region_id,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, cfg.heads, out_init, rng)?,
            dropout: Dropout::new(cfg.attention_dropout),
            regions: cfg.regions,
            metric_scale: cfg.metric_scale,
        })
    }

    /// Scaled metric rows: `[N_g × N_p]` in region mode, `[1 × N_g·N_p]` in
    /// global mode.
    pub fn metric_input(&self, c_m: &EffortMetrics) -> Result<Tensor> {
        if c_m.regions() != self.regions {
            return Err(Error::Shape(format!(
                "effort metrics cover {} regions, model expects {}",
                c_m.regions(),
                self.regions
            )));
        }
        let data: Vec<f64> = c_m
            .rows()
            .iter()
            .flat_map(|r| [r[0] / self.metric_scale[0], r[1] / self.metric_scale[1]])
            .collect();
        match self.mode {
            ConditioningMode::Region => Tensor::from_vec(&[self.regions, 2], data),
            ConditioningMode::Global => Tensor::from_vec(&[1, self.regions * 2], data),
        }
    }

    /// Key/value tokens before the attention projections.
    fn tokens(&self, store: &ParamStore, metric_in: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let mut tokens = self.metric_proj.forward(store, metric_in)?;
        if let Some(id) = self.region_id {
            tokens.add_assign(store.value(id));
        }
        self.norm.forward(store, &tokens)
    }

    /// Attention output without the residual, for queries `x: [n × D]`.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Tensor,
        metric_in: &Tensor,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor, EmaCache)> {
        let (tokens, norm) = self.tokens(store, metric_in)?;
        let groups = AttentionGroup::dense(x.rows(), tokens.rows());
        let opts = AttentionOptions {
            dropout: rng.filter(|_| self.dropout.rate > 0.0).map(|r| (self.dropout, r)),
            order_invariant: true,
        };
        let (y, attn) = self.attn.forward(store, x, &tokens, &groups, opts)?;
        Ok((
            y,
            EmaCache {
                metric_in: metric_in.clone(),
                norm,
                attn,
            },
        ))
    }

    /// Returns `dL/dx`; metric inputs are data, so no gradient flows to them.
    pub fn backward(&self, store: &ParamStore, cache: &EmaCache, dy: &Tensor, grads: &mut Gradients) -> Tensor {
        let (dx, dtokens) = self.attn.backward(store, &cache.attn, dy, grads);
        let dpre = self.norm.backward(store, &cache.norm, &dtokens, grads);
        if let Some(id) = self.region_id {
            grads.get_mut(id).add_assign(&dpre);
        }
        self.metric_proj.backward(store, &cache.metric_in, &dpre, grads);
        dx
    }

    /// Standalone module: `z + Attn(z, c_m)` on latents `[T, N_g, D]`.
    pub fn apply_residual(
        &self,
        store: &ParamStore,
        z: &Tensor,
        c_m: &EffortMetrics,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor, EmaCache)> {
        let metric_in = self.metric_input(c_m)?;
        let (mut y, cache) = self.forward(store, z, &metric_in, rng)?;
        y.add_assign(z);
        Ok((y.reshaped(z.shape())?, cache))
    }
}
