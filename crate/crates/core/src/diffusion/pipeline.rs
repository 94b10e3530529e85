//! A trained generator: denoiser, latent codec, latent normalisation,
//! noise schedule and prompt vocabulary, stored together in one checkpoint.

use std::path::Path;

use serde_json::{json, Value};

use super::sampler::{ddim_sample_latent, SamplerOptions};
use super::schedule::{DiffusionSchedule, ScheduleConfig};
use crate::effort::EffortMetrics;
use crate::error::{Error, Result};
use crate::model::{Denoiser, LatentCodec, LatentNorm};
use crate::motion::{GroupMap, MotionSequence, PromptVocabulary};
use crate::nn::Checkpoint;

#[derive(Debug, Clone)]
pub struct MotionModel {
    pub denoiser: Denoiser,
    pub codec: LatentCodec,
    pub norm: LatentNorm,
    pub schedule: DiffusionSchedule,
    pub vocab: PromptVocabulary,
}

impl MotionModel {
    pub fn new(
        denoiser: Denoiser,
        groups: GroupMap,
        norm: LatentNorm,
        schedule: ScheduleConfig,
        vocab: PromptVocabulary,
    ) -> Result<Self> {
        let cfg = &denoiser.config;
        if groups.len() != cfg.regions || norm.regions != cfg.regions || norm.dim != cfg.latent_dim {
            return Err(Error::Validation(format!(
                "model expects {} regions × {} channels; groups have {}, normalisation {} × {}",
                cfg.regions,
                cfg.latent_dim,
                groups.len(),
                norm.regions,
                norm.dim
            )));
        }
        if vocab.len() != cfg.vocab_size {
            return Err(Error::Validation(format!(
                "vocabulary has {} prompts, model expects {}",
                vocab.len(),
                cfg.vocab_size
            )));
        }
        Ok(Self {
            codec: LatentCodec::new(groups, cfg.latent_dim)?,
            denoiser,
            norm,
            schedule: DiffusionSchedule::new(schedule)?,
            vocab,
        })
    }

    pub fn groups(&self) -> &GroupMap {
        self.codec.groups()
    }

    /// Prompt id, or `None` for the empty / absent prompt.
    pub fn prompt_id(&self, prompt: Option<&str>) -> Result<Option<usize>> {
        match prompt {
            None | Some("") => Ok(None),
            Some(p) => self.vocab.id_of(p).map(Some),
        }
    }

    /// Samples a motion of `frames` frames conditioned on a prompt and
    /// per-region effort metrics.
    pub fn generate(
        &self,
        prompt: Option<&str>,
        metrics: &EffortMetrics,
        frames: usize,
        opts: SamplerOptions,
    ) -> Result<MotionSequence> {
        if frames < 2 {
            return Err(Error::InvalidParameter(format!("cannot generate {frames} frames")));
        }
        let text = self.prompt_id(prompt)?;
        let cfg = &self.denoiser.config;
        let shape = [frames, cfg.regions, cfg.latent_dim];
        let z = ddim_sample_latent(&self.denoiser, &self.schedule, &shape, text, metrics, opts)?;
        let z = self.norm.denormalize(&z);
        if !z.all_finite() {
            return Err(Error::Validation("sampling diverged to non-finite latents".into()));
        }
        self.codec
            .decode(&z, prompt.filter(|p| !p.is_empty()).map(str::to_owned))
    }

    /// Checkpoint with the generator metadata merged into `extra`.
    pub fn to_checkpoint(&self, extra: Value) -> Checkpoint {
        let mut meta = json!({
            "latent_norm": self.norm,
            "groups": self.groups(),
            "vocabulary": self.vocab,
            "schedule": self.schedule.config(),
        });
        if let (Some(m), Value::Object(e)) = (meta.as_object_mut(), extra) {
            m.extend(e);
        }
        self.denoiser.to_checkpoint(meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        fn field<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<T> {
            let v = ck
                .meta
                .get(key)
                .ok_or_else(|| Error::MissingModel(format!("checkpoint lacks `{key}`")))?;
            serde_json::from_value(v.clone()).map_err(|e| Error::parse(format!("checkpoint {key}"), e))
        }
        let denoiser = Denoiser::from_checkpoint(ck)?;
        Self::new(
            denoiser,
            field(ck, "groups")?,
            field(ck, "latent_norm")?,
            field(ck, "schedule")?,
            field(ck, "vocabulary")?,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(Value::Null).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingModel(format!("no checkpoint at {}", path.display())));
        }
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
