use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::block::{BlockCache, BlockContext, DenoiserBlock};
use super::config::{ConditioningMode, DenoiserConfig};
use crate::effort::EffortMetrics;
use crate::error::{Error, Result};
use crate::motion::PromptVocabulary;
use crate::nn::attention::{AttentionCache, AttentionGroup};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::layers::{sinusoidal_embedding, Init, Linear, TimestepCache, TimestepEmbedder};
use crate::nn::params::{Gradients, ParamId, ParamStore};
use crate::nn::Tensor;

/// Batched latents `[B, T, N_g, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    data: Tensor,
}

impl LatentTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "latents must be [B, T, N_g, D], got {:?}",
                data.shape()
            )));
        }
        Ok(Self { data })
    }

    pub fn from_samples(samples: &[Tensor]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Shape("empty latent batch".into()))?;
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * samples.len());
        for s in samples {
            if s.shape() != first.shape() {
                return Err(Error::Shape("latent samples differ in shape".into()));
            }
            data.extend_from_slice(s.data());
        }
        Self::new(Tensor::from_vec(&shape, data)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn batch(&self) -> usize {
        self.data.shape()[0]
    }

    /// Sample `b` as `[T, N_g, D]`.
    pub fn sample(&self, b: usize) -> Tensor {
        let shape = &self.data.shape()[1..];
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, self.data.data()[b * n..(b + 1) * n].to_vec()).expect("slice matches shape")
    }
}

/// Text conditioning vector with the vocabulary id it came from (`None` for
/// the learned unconditional row).
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Tensor,
    pub source_id: Option<usize>,
}

/// Conditioning of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a> {
    pub text: Option<usize>,
    pub metrics: &'a EffortMetrics,
}

/// Transformer denoiser predicting diffusion velocity for latents
/// `[T, N_g, D]`.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    time_embed: TimestepEmbedder,
    /// `[vocab + 1, D]`; the last row is the null prompt.
    text_table: ParamId,
    blocks: Vec<DenoiserBlock>,
    head: Linear,
}

pub struct ForwardCache {
    z_shape: Vec<usize>,
    time: TimestepCache,
    text_row: usize,
    metric_in: Tensor,
    text_token: Tensor,
    temporal_groups: Vec<AttentionGroup>,
    skeletal_groups: Vec<AttentionGroup>,
    frame_encoding: Tensor,
    blocks: Vec<BlockCache>,
    head_in: Tensor,
}

impl ForwardCache {
    pub fn metric_attention(&self, layer: usize) -> &AttentionCache {
        self.blocks[layer].metric_attention()
    }

    pub fn skeletal_attention(&self, layer: usize) -> &AttentionCache {
        self.blocks[layer].skeletal_attention()
    }

    pub fn temporal_attention(&self, layer: usize) -> &AttentionCache {
        self.blocks[layer].temporal_attention()
    }
}

impl Denoiser {
    /// Builds a model whose sublayer output projections are zero, so the
    /// untrained denoiser is the identity on its input latents.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.latent_dim;
        let time_embed = TimestepEmbedder::new(&mut store, "time_embed", d, &mut rng);
        let text_table = store.add(
            "text_table",
            crate::nn::params::fan_in_uniform(&[config.vocab_size + 1, d], 1, &mut rng),
        );
        let blocks = (0..config.layers)
            .map(|l| DenoiserBlock::new(&mut store, &format!("blocks.{l}"), &config, Init::Zero, &mut rng))
            .collect::<Result<_>>()?;
        let head = Linear::new(&mut store, "head", d, d, Init::Identity, &mut rng);
        Ok(Self {
            config,
            store,
            time_embed,
            text_table,
            blocks,
            head,
        })
    }

    /// Same architecture with every parameter drawn from `U(-scale, scale)`.
    pub fn randomized(config: DenoiserConfig, seed: u64, scale: f64) -> Result<Self> {
        let mut m = Self::new(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        m.store.randomize(&mut rng, scale);
        Ok(m)
    }

    pub fn blocks(&self) -> &[DenoiserBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn text_table(&self) -> ParamId {
        self.text_table
    }

    pub fn embed_text(&self, prompt: Option<&str>, vocab: &PromptVocabulary) -> Result<TextEmbedding> {
        let id = prompt.map(|p| vocab.id_of(p)).transpose()?;
        self.embed_text_id(id)
    }

    pub fn embed_text_id(&self, id: Option<usize>) -> Result<TextEmbedding> {
        let row = self.text_row(id)?;
        Ok(TextEmbedding {
            vector: Tensor::from_vec(
                &[self.config.latent_dim],
                self.store.value(self.text_table).row(row).to_vec(),
            )?,
            source_id: id,
        })
    }

    fn text_row(&self, id: Option<usize>) -> Result<usize> {
        match id {
            None => Ok(self.config.vocab_size),
            Some(i) if i < self.config.vocab_size => Ok(i),
            Some(i) => Err(Error::InvalidParameter(format!(
                "text id {i} outside vocabulary of {}",
                self.config.vocab_size
            ))),
        }
    }

    fn check_latents(&self, z: &Tensor) -> Result<usize> {
        match z.shape() {
            [t, g, d] if *g == self.config.regions && *d == self.config.latent_dim && *t >= 1 => Ok(*t),
            s => Err(Error::Shape(format!(
                "latents {s:?} do not match [T, {}, {}]",
                self.config.regions, self.config.latent_dim
            ))),
        }
    }

    /// Predicted velocity for one latent sample `[T, N_g, D]`.
    pub fn forward(&self, z: &Tensor, t: f64, cond: Conditioning<'_>) -> Result<Tensor> {
        self.forward_cached(z, t, cond, None).map(|(y, _)| y)
    }

    /// Forward pass keeping activations for [`backward`](Self::backward).
    /// With `rng`, metric-attention dropout is active.
    pub fn forward_cached(
        &self,
        z: &Tensor,
        t: f64,
        cond: Conditioning<'_>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor, ForwardCache)> {
        let frames = self.check_latents(z)?;
        let (ng, d) = (self.config.regions, self.config.latent_dim);
        let (temb, time) = self.time_embed.forward(&self.store, t)?;
        let text_row = self.text_row(cond.text)?;
        let text_token = Tensor::from_vec(&[1, d], self.store.value(self.text_table).row(text_row).to_vec())?;
        let metric_in = self.blocks[0].metric.metric_input(cond.metrics)?;

        let temporal_groups: Vec<AttentionGroup> = (0..ng)
            .map(|g| {
                let rows: Vec<usize> = (0..frames).map(|f| f * ng + g).collect();
                AttentionGroup {
                    queries: rows.clone(),
                    keys: rows,
                }
            })
            .collect();
        let skeletal_groups: Vec<AttentionGroup> = (0..frames)
            .map(|f| {
                let rows: Vec<usize> = (f * ng..(f + 1) * ng).collect();
                AttentionGroup {
                    queries: rows.clone(),
                    keys: rows,
                }
            })
            .collect();
        let mut frame_encoding = Tensor::zeros(&[frames * ng, d]);
        for f in 0..frames {
            let enc = sinusoidal_embedding(f as f64, d);
            for g in 0..ng {
                frame_encoding.row_mut(f * ng + g).copy_from_slice(&enc);
            }
        }

        let ctx = BlockContext {
            temb: &temb,
            metric_in: &metric_in,
            text_token: &text_token,
            temporal_groups: &temporal_groups,
            skeletal_groups: &skeletal_groups,
            frame_encoding: &frame_encoding,
            regions: ng,
        };
        let mut h = z.clone().reshaped(&[frames * ng, d])?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let r: Option<&mut dyn RngCore> = match rng.as_mut() {
                Some(r) => Some(&mut **r),
                None => None,
            };
            let (next, cache) = block.forward(&self.store, h, &ctx, r)?;
            h = next;
            caches.push(cache);
        }
        let y = self.head.forward(&self.store, &h)?.reshaped(z.shape())?;
        y.debug_check_finite("denoiser");
        Ok((
            y,
            ForwardCache {
                z_shape: z.shape().to_vec(),
                time,
                text_row,
                metric_in,
                text_token,
                temporal_groups,
                skeletal_groups,
                frame_encoding,
                blocks: caches,
                head_in: h,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream gradient `dy` and returns
    /// the gradient with respect to the input latents.
    pub fn backward(&self, cache: &ForwardCache, dy: &Tensor, grads: &mut Gradients) -> Tensor {
        let d = self.config.latent_dim;
        let dy = dy.clone().reshaped(&[cache.head_in.rows(), d]).expect("output shape");
        let mut dz = self.head.backward(&self.store, &cache.head_in, &dy, grads);
        let temb_placeholder = Tensor::zeros(&[d]);
        let ctx = BlockContext {
            temb: &temb_placeholder,
            metric_in: &cache.metric_in,
            text_token: &cache.text_token,
            temporal_groups: &cache.temporal_groups,
            skeletal_groups: &cache.skeletal_groups,
            frame_encoding: &cache.frame_encoding,
            regions: self.config.regions,
        };
        let mut dtemb = Tensor::zeros(&[d]);
        let mut dtext = Tensor::zeros(&[1, d]);
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            dz = block.backward(&self.store, bc, dz, &ctx, grads, &mut dtemb, &mut dtext);
        }
        self.time_embed.backward(&self.store, &cache.time, &dtemb, grads);
        let table = grads.get_mut(self.text_table);
        for (g, v) in table.row_mut(cache.text_row).iter_mut().zip(dtext.data()) {
            *g += v;
        }
        dz.reshaped(&cache.z_shape).expect("input shape")
    }

    /// Forward over a batch, each sample with its own conditioning.
    pub fn forward_batch(&self, z: &LatentTensor, t: &[f64], cond: &[Conditioning<'_>]) -> Result<LatentTensor> {
        if t.len() != z.batch() || cond.len() != z.batch() {
            return Err(Error::Shape("batch, timestep and conditioning counts differ".into()));
        }
        let outs: Vec<Tensor> = (0..z.batch())
            .into_par_iter()
            .map(|b| self.forward(&z.sample(b), t[b], cond[b]))
            .collect::<Result<_>>()?;
        LatentTensor::from_samples(&outs)
    }

    /// Copy with regions reordered so that new region `i` is old region
    /// `perm[i]` in every region-indexed parameter.
    pub fn permute_regions(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.config.regions {
            return Err(Error::Shape("permutation length differs from region count".into()));
        }
        let mut out = self.clone();
        for block in &self.blocks {
            for id in block.region_params() {
                let src = self.store.value(id);
                let dst = out.store.value_mut(id);
                for (i, &p) in perm.iter().enumerate() {
                    dst.row_mut(i).copy_from_slice(src.row(p));
                }
            }
        }
        Ok(out)
    }

    pub fn is_global(&self) -> bool {
        self.config.conditioning_mode == ConditioningMode::Global
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut meta = serde_json::json!({ "config": self.config });
        if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
            m.extend(e);
        }
        Checkpoint {
            names: self.store.names().map(str::to_owned).collect(),
            tensors: self.store.params().iter().map(|p| p.value.clone()).collect(),
            meta,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: DenoiserConfig = serde_json::from_value(ck.meta["config"].clone())
            .map_err(|e| Error::parse("checkpoint model config", e))?;
        let mut model = Self::new(config, 0)?;
        let n = model.store.len();
        if ck.names.len() < n {
            return Err(Error::Shape(format!(
                "checkpoint holds {} tensors, model needs {n}",
                ck.names.len()
            )));
        }
        model.store.load_values(&ck.names[..n], ck.tensors[..n].to_vec())?;
        Ok(model)
    }
}

/// Uniform `[-scale, scale)` latents of shape `[T, N_g, D]`.
pub fn random_latents(frames: usize, regions: usize, dim: usize, rng: &mut impl Rng, scale: f64) -> Tensor {
    let n = frames * regions * dim;
    Tensor::from_vec(
        &[frames, regions, dim],
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .expect("shape product")
}
