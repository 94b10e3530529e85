//! One denoiser block. Sublayers run strictly in the order temporal,
//! skeletal, effort-metric, text cross-attention, feed-forward, each as
//! `z ← z + FiLM(Sublayer(LN(z)), t)`.

use rand::{Rng, RngCore};

use super::config::DenoiserConfig;
use super::ema::{EmaAttention, EmaCache};
use crate::error::Result;
use crate::nn::attention::{AttentionCache, AttentionGroup, MultiHeadAttention};
use crate::nn::layers::{FeedForward, FeedForwardCache, Film, FilmCache, Init, LayerNorm, LayerNormCache};
use crate::nn::params::{fan_in_uniform, Gradients, ParamId, ParamStore};
use crate::nn::Tensor;

/// Per-call inputs shared by every block.
pub(crate) struct BlockContext<'a> {
    pub temb: &'a Tensor,
    pub metric_in: &'a Tensor,
    pub text_token: &'a Tensor,
    pub temporal_groups: &'a [AttentionGroup],
    pub skeletal_groups: &'a [AttentionGroup],
    /// `[T·N_g × D]` sinusoidal frame encoding added before temporal
    /// attention.
    pub frame_encoding: &'a Tensor,
    pub regions: usize,
}

#[derive(Debug, Clone)]
pub struct DenoiserBlock {
    pub temporal_norm: LayerNorm,
    pub temporal: MultiHeadAttention,
    pub temporal_film: Film,
    pub skeletal_norm: LayerNorm,
    pub skeletal: MultiHeadAttention,
    /// `[N_g, D]` learned region positions added before skeletal attention.
    pub region_pos: ParamId,
    pub skeletal_film: Film,
    pub metric_norm: LayerNorm,
    pub metric: EmaAttention,
    pub metric_film: Film,
    pub text_norm: LayerNorm,
    pub text: MultiHeadAttention,
    pub text_film: Film,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_film: Film,
}

#[derive(Debug, Clone)]
pub(crate) struct AttnSublayerCache {
    norm: LayerNormCache,
    attn: AttentionCache,
    film: FilmCache,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    temporal: AttnSublayerCache,
    skeletal: AttnSublayerCache,
    metric: (LayerNormCache, EmaCache, FilmCache),
    text: AttnSublayerCache,
    ffn: (LayerNormCache, FeedForwardCache, FilmCache),
}

impl BlockCache {
    pub(crate) fn metric_attention(&self) -> &AttentionCache {
        self.metric.1.attention()
    }

    pub(crate) fn skeletal_attention(&self) -> &AttentionCache {
        &self.skeletal.attn
    }

    pub(crate) fn temporal_attention(&self) -> &AttentionCache {
        &self.temporal.attn
    }
}

impl DenoiserBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &DenoiserConfig,
        out_init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = cfg.latent_dim;
        let n = |s: &str| format!("{name}.{s}");
        Ok(Self {
            temporal_norm: LayerNorm::new(store, &n("temporal_norm"), d),
            temporal: MultiHeadAttention::new(store, &n("temporal"), d, cfg.heads, out_init, rng)?,
            temporal_film: Film::new(store, &n("temporal_film"), d, d, rng),
            skeletal_norm: LayerNorm::new(store, &n("skeletal_norm"), d),
            skeletal: MultiHeadAttention::new(store, &n("skeletal"), d, cfg.heads, out_init, rng)?,
            region_pos: store.add(n("region_pos"), fan_in_uniform(&[cfg.regions, d], d, rng)),
            skeletal_film: Film::new(store, &n("skeletal_film"), d, d, rng),
            metric_norm: LayerNorm::new(store, &n("metric_norm"), d),
            metric: EmaAttention::new(store, &n("metric"), cfg, out_init, rng)?,
            metric_film: Film::new(store, &n("metric_film"), d, d, rng),
            text_norm: LayerNorm::new(store, &n("text_norm"), d),
            text: MultiHeadAttention::new(store, &n("text"), d, cfg.heads, out_init, rng)?,
            text_film: Film::new(store, &n("text_film"), d, d, rng),
            ffn_norm: LayerNorm::new(store, &n("ffn_norm"), d),
            ffn: FeedForward::new(store, &n("ffn"), d, d * cfg.ffn_mult, out_init, rng),
            ffn_film: Film::new(store, &n("ffn_film"), d, d, rng),
        })
    }

    pub(crate) fn forward(
        &self,
        store: &ParamStore,
        mut z: Tensor,
        ctx: &BlockContext<'_>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor, BlockCache)> {
        // Temporal attention within each region over frames.
        let (h, norm) = self.temporal_norm.forward(store, &z)?;
        let mut h = h;
        h.add_assign(ctx.frame_encoding);
        let (a, attn) = self
            .temporal
            .forward(store, &h, &h, ctx.temporal_groups, Default::default())?;
        let (f, film) = self.temporal_film.forward(store, &a, ctx.temb)?;
        z.add_assign(&f);
        let temporal = AttnSublayerCache { norm, attn, film };

        // Skeletal attention within each frame over regions.
        let (mut h, norm) = self.skeletal_norm.forward(store, &z)?;
        let pos = store.value(self.region_pos);
        for (i, row) in h.data_mut().chunks_mut(pos.cols()).enumerate() {
            for (v, p) in row.iter_mut().zip(pos.row(i % ctx.regions)) {
                *v += p;
            }
        }
        let opts = crate::nn::AttentionOptions {
            dropout: None,
            order_invariant: true,
        };
        let (a, attn) = self.skeletal.forward(store, &h, &h, ctx.skeletal_groups, opts)?;
        let (f, film) = self.skeletal_film.forward(store, &a, ctx.temb)?;
        z.add_assign(&f);
        let skeletal = AttnSublayerCache { norm, attn, film };

        // Effort-metric attention.
        let (h, norm) = self.metric_norm.forward(store, &z)?;
        let (a, ema) = self.metric.forward(store, &h, ctx.metric_in, rng)?;
        let (f, film) = self.metric_film.forward(store, &a, ctx.temb)?;
        z.add_assign(&f);
        let metric = (norm, ema, film);

        // Text cross-attention over the prompt token.
        let (h, norm) = self.text_norm.forward(store, &z)?;
        let groups = AttentionGroup::dense(h.rows(), ctx.text_token.rows());
        let (a, attn) = self
            .text
            .forward(store, &h, ctx.text_token, &groups, Default::default())?;
        let (f, film) = self.text_film.forward(store, &a, ctx.temb)?;
        z.add_assign(&f);
        let text = AttnSublayerCache { norm, attn, film };

        let (h, norm) = self.ffn_norm.forward(store, &z)?;
        let (a, ff) = self.ffn.forward(store, &h)?;
        let (f, film) = self.ffn_film.forward(store, &a, ctx.temb)?;
        z.add_assign(&f);
        let ffn = (norm, ff, film);

        Ok((
            z,
            BlockCache {
                temporal,
                skeletal,
                metric,
                text,
                ffn,
            },
        ))
    }

    /// Backpropagates `dz` through the block. Adds the timestep-embedding
    /// and text-token gradients into `dtemb` / `dtext`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        store: &ParamStore,
        cache: &BlockCache,
        mut dz: Tensor,
        ctx: &BlockContext<'_>,
        grads: &mut Gradients,
        dtemb: &mut Tensor,
        dtext: &mut Tensor,
    ) -> Tensor {
        // Feed-forward.
        let (norm, ff, film) = &cache.ffn;
        let (da, dt) = self.ffn_film.backward(store, film, &dz, grads);
        dtemb.add_assign(&dt);
        let dh = self.ffn.backward(store, ff, &da, grads);
        dz.add_assign(&self.ffn_norm.backward(store, norm, &dh, grads));

        // Text.
        let c = &cache.text;
        let (da, dt) = self.text_film.backward(store, &c.film, &dz, grads);
        dtemb.add_assign(&dt);
        let (dh, dtok) = self.text.backward(store, &c.attn, &da, grads);
        dtext.add_assign(&dtok);
        dz.add_assign(&self.text_norm.backward(store, &c.norm, &dh, grads));

        // Metric.
        let (norm, ema, film) = &cache.metric;
        let (da, dt) = self.metric_film.backward(store, film, &dz, grads);
        dtemb.add_assign(&dt);
        let dh = self.metric.backward(store, ema, &da, grads);
        dz.add_assign(&self.metric_norm.backward(store, norm, &dh, grads));

        // Skeletal: queries and keys are the same tensor.
        let c = &cache.skeletal;
        let (da, dt) = self.skeletal_film.backward(store, &c.film, &dz, grads);
        dtemb.add_assign(&dt);
        let (mut dh, dkv) = self.skeletal.backward(store, &c.attn, &da, grads);
        dh.add_assign(&dkv);
        {
            let dpos = grads.get_mut(self.region_pos);
            let d = dpos.cols();
            for (i, row) in dh.data().chunks(d).enumerate() {
                for (g, v) in dpos.row_mut(i % ctx.regions).iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        dz.add_assign(&self.skeletal_norm.backward(store, &c.norm, &dh, grads));

        // Temporal; the frame encoding is constant.
        let c = &cache.temporal;
        let (da, dt) = self.temporal_film.backward(store, &c.film, &dz, grads);
        dtemb.add_assign(&dt);
        let (mut dh, dkv) = self.temporal.backward(store, &c.attn, &da, grads);
        dh.add_assign(&dkv);
        dz.add_assign(&self.temporal_norm.backward(store, &c.norm, &dh, grads));
        dz
    }

    /// Region-indexed parameters, for permutation bookkeeping.
    pub(crate) fn region_params(&self) -> Vec<ParamId> {
        let mut out = vec![self.region_pos];
        out.extend(self.metric.region_id);
        out
    }
}
