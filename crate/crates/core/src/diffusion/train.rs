//! v-prediction training with AdamW, classifier-free text dropout and a
//! step learning-rate decay.
//!
//! Every random draw of step `s` comes from a generator keyed by
//! `(seed, s)`, so a run resumed from a checkpoint continues exactly as the
//! uninterrupted run would.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::pipeline::MotionModel;
use super::schedule::{velocity_with, ScheduleConfig};
use crate::augment::{load_manifest, MANIFEST_NAME};
use crate::effort::{effort_metrics, EffortMetrics, N_METRICS};
use crate::error::{Error, Result};
use crate::model::{Conditioning, ConditioningMode, Denoiser, DenoiserConfig, LatentCodec, LatentNorm};
use crate::motion::{load_motion, GroupMap, MotionSequence, PromptVocabulary};
use crate::nn::{AdamW, AdamWConfig, Checkpoint, Gradients, Tensor};

/// Training configuration. Architecture and optimisation names follow the
/// usual hyperparameter table; the remaining fields are desk-scale knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dimension: usize,
    pub attention_heads: usize,
    pub transformer_layers: usize,
    pub effort_metric_dimension: usize,
    pub prediction_type: String,
    pub beta_schedule: ScheduleConfig,
    pub guidance_scale: f64,
    pub optimizer: AdamWConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: u64,
    /// Iteration at which the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_iteration: u64,
    pub lr_decay_factor: f64,
    /// Probability of replacing the prompt with the null prompt.
    pub p_uncond: f64,
    pub attention_dropout: f64,
    pub conditioning_mode: ConditioningMode,
    pub ffn_mult: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub log_every: u64,
    /// Periodic checkpoint interval; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let desk = DenoiserConfig::desk();
        Self {
            latent_dimension: desk.latent_dim,
            attention_heads: desk.heads,
            transformer_layers: desk.layers,
            effort_metric_dimension: N_METRICS,
            prediction_type: "velocity".into(),
            beta_schedule: ScheduleConfig::default(),
            guidance_scale: 7.5,
            optimizer: AdamWConfig::default(),
            learning_rate: 5e-4,
            batch_size: 64,
            iterations: 2000,
            lr_decay_iteration: 50_000,
            lr_decay_factor: 0.1,
            p_uncond: 0.1,
            attention_dropout: desk.attention_dropout,
            conditioning_mode: ConditioningMode::Region,
            ffn_mult: desk.ffn_mult,
            grad_clip: Some(1.0),
            seed: 0,
            log_every: 50,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prediction_type != "velocity" {
            return Err(Error::Validation(format!(
                "prediction_type `{}` is unsupported; only `velocity` is implemented",
                self.prediction_type
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning_rate {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::Validation(format!("p_uncond {} outside [0, 1]", self.p_uncond)));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Validation(format!("grad_clip {c} must be positive")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, regions: usize, vocab_size: usize) -> DenoiserConfig {
        DenoiserConfig {
            latent_dim: self.latent_dimension,
            heads: self.attention_heads,
            layers: self.transformer_layers,
            regions,
            metrics_per_region: self.effort_metric_dimension,
            ffn_mult: self.ffn_mult,
            conditioning_mode: self.conditioning_mode,
            attention_dropout: self.attention_dropout,
            vocab_size,
            ..DenoiserConfig::desk()
        }
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        if step >= self.lr_decay_iteration {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }
}

/// One training example: raw latents, prompt id and the metrics measured on
/// the motion the latents encode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub latent: Tensor,
    pub text: Option<usize>,
    pub metrics: EffortMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    pub groups: GroupMap,
    pub vocab: PromptVocabulary,
    pub samples: Vec<TrainingSample>,
}

impl TrainingCorpus {
    /// Encodes motions and measures their effort metrics. Labels must be in
    /// the vocabulary; unlabeled motions train the unconditional branch.
    pub fn from_motions(
        motions: &[MotionSequence],
        groups: GroupMap,
        vocab: PromptVocabulary,
        latent_dim: usize,
    ) -> Result<Self> {
        if motions.is_empty() {
            return Err(Error::Validation("empty training corpus".into()));
        }
        let codec = LatentCodec::new(groups.clone(), latent_dim)?;
        let samples = motions
            .iter()
            .map(|m| {
                Ok(TrainingSample {
                    latent: codec.encode(m)?,
                    text: m.label().map(|l| vocab.id_of(l)).transpose()?,
                    metrics: effort_metrics(m, &groups)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { groups, vocab, samples })
    }

    /// Reads every motion listed in `<dir>/manifest.jsonl`, or every motion
    /// file in `dir` when there is no manifest.
    pub fn load_dir(dir: &Path, groups: GroupMap, vocab: PromptVocabulary, latent_dim: usize) -> Result<Self> {
        let manifest = dir.join(MANIFEST_NAME);
        let paths: Vec<_> = if manifest.exists() {
            load_manifest(&manifest)?.into_iter().map(|r| dir.join(r.out)).collect()
        } else {
            crate::augment::motion_files(dir)?
        };
        let motions = paths.iter().map(load_motion).collect::<Result<Vec<_>>>()?;
        Self::from_motions(&motions, groups, vocab, latent_dim)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean effort metrics of the samples carrying prompt id `text`.
    pub fn mean_metrics(&self, text: Option<usize>) -> Result<EffortMetrics> {
        EffortMetrics::mean(self.samples.iter().filter(|s| s.text == text).map(|s| &s.metrics))
    }

    pub fn fit_norm(&self) -> Result<LatentNorm> {
        let latents: Vec<Tensor> = self.samples.iter().map(|s| s.latent.clone()).collect();
        LatentNorm::fit(&latents)
    }
}

/// The random draws of one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub index: usize,
    pub timestep: usize,
    pub text: Option<usize>,
    pub noise: Tensor,
    pub dropout_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
    pub grad_norm: f64,
}

pub struct Trainer {
    pub model: MotionModel,
    pub config: TrainConfig,
    optimizer: AdamW,
    step: u64,
    /// Normalised latents, parallel to the corpus samples.
    latents: Vec<Tensor>,
    corpus: TrainingCorpus,
}

impl Trainer {
    pub fn new(config: TrainConfig, corpus: TrainingCorpus) -> Result<Self> {
        config.validate()?;
        let model_cfg = config.model_config(corpus.groups.len(), corpus.vocab.len());
        let denoiser = Denoiser::new(model_cfg, config.seed)?;
        let norm = corpus.fit_norm()?;
        let model = MotionModel::new(
            denoiser,
            corpus.groups.clone(),
            norm,
            config.beta_schedule,
            corpus.vocab.clone(),
        )?;
        let optimizer = AdamW::new(config.optimizer, &model.denoiser.store);
        Self::assemble(model, config, optimizer, 0, corpus)
    }

    fn assemble(
        model: MotionModel,
        config: TrainConfig,
        optimizer: AdamW,
        step: u64,
        corpus: TrainingCorpus,
    ) -> Result<Self> {
        if corpus.groups != *model.groups() || corpus.vocab != model.vocab {
            return Err(Error::Validation(
                "corpus grouping or vocabulary differs from the model's".into(),
            ));
        }
        let latents = corpus.samples.iter().map(|s| model.norm.normalize(&s.latent)).collect();
        Ok(Self {
            model,
            config,
            optimizer,
            step,
            latents,
            corpus,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    /// Draws the examples of step `step`.
    pub fn draw(&self, step: u64) -> Vec<TrainingBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        let steps = self.model.schedule.steps();
        (0..self.config.batch_size)
            .map(|_| {
                let index = rng.random_range(0..self.corpus.len());
                let timestep = rng.random_range(0..steps);
                let keep = rng.random::<f64>() >= self.config.p_uncond;
                let text = self.corpus.samples[index].text.filter(|_| keep);
                let shape = self.latents[index].shape().to_vec();
                let n = shape.iter().product();
                let noise = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                TrainingBatch {
                    index,
                    timestep,
                    text,
                    noise: Tensor::from_vec(&shape, noise).expect("shape product"),
                    dropout_seed: rng.next_u64(),
                }
            })
            .collect()
    }

    /// Loss and summed gradients of one example, scaled for a batch mean.
    fn example(&self, b: &TrainingBatch) -> Result<(f64, Gradients)> {
        let den = &self.model.denoiser;
        let x = &self.latents[b.index];
        let (a, s) = self.model.schedule.alpha_sigma(b.timestep);
        let z = x.zip_map(&b.noise, |x, e| a * x + s * e);
        let target = velocity_with(x, &b.noise, a, s);
        let cond = Conditioning {
            text: b.text,
            metrics: &self.corpus.samples[b.index].metrics,
        };
        let mut drop_rng = ChaCha8Rng::seed_from_u64(b.dropout_seed);
        let (pred, cache) = den.forward_cached(&z, b.timestep as f64, cond, Some(&mut drop_rng as &mut dyn RngCore))?;
        let n = pred.len() as f64;
        let loss = super::schedule::denoiser_loss(&pred, &target)?;
        let scale = 2.0 / (n * self.config.batch_size as f64);
        let dy = pred.zip_map(&target, |p, t| scale * (p - t));
        let mut grads = den.store.zero_grads();
        den.backward(&cache, &dy, &mut grads);
        Ok((loss, grads))
    }

    /// Runs one optimisation step.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let draws = self.draw(self.step);
        let results: Vec<(f64, Gradients)> = draws.par_iter().map(|b| self.example(b)).collect::<Result<_>>()?;
        let mut grads = self.model.denoiser.store.zero_grads();
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            grads.accumulate(g);
        }
        loss /= results.len() as f64;
        let grad_norm = grads.global_norm();
        if !(loss.is_finite() && grad_norm.is_finite()) {
            return Err(Error::Validation(format!("training diverged at step {}", self.step)));
        }
        if let Some(clip) = self.config.grad_clip {
            if grad_norm > clip {
                grads.scale(clip / grad_norm);
            }
        }
        let lr = self.config.learning_rate_at(self.step);
        self.optimizer.update(&mut self.model.denoiser.store, &grads, lr);
        let record = StepRecord {
            step: self.step,
            loss,
            learning_rate: lr,
            grad_norm,
        };
        self.step += 1;
        Ok(record)
    }

    /// Trains until `config.iterations`, calling `on_step` after each step.
    pub fn run(&mut self, mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>) -> Result<Vec<StepRecord>> {
        let mut log = Vec::new();
        while self.step < self.config.iterations {
            let rec = self.train_step()?;
            on_step(self, &rec)?;
            log.push(rec);
        }
        Ok(log)
    }

    /// Model checkpoint extended with optimizer moments and training state.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint(json!({
            "training": {
                "step": self.step,
                "optimizer_step": self.optimizer.step,
                "config": self.config,
            }
        }));
        let names: Vec<String> = self.model.denoiser.store.names().map(str::to_owned).collect();
        for (prefix, moments) in [("adam.m.", &self.optimizer.m), ("adam.v.", &self.optimizer.v)] {
            for (name, t) in names.iter().zip(moments) {
                ck.names.push(format!("{prefix}{name}"));
                ck.tensors.push(t.clone());
            }
        }
        ck
    }

    /// Restores a trainer from [`checkpoint`](Self::checkpoint) output. The
    /// stored training config wins over the caller's except for
    /// `iterations`, `log_every` and `checkpoint_every`.
    pub fn resume(ck: &Checkpoint, corpus: TrainingCorpus, overrides: Option<&TrainConfig>) -> Result<Self> {
        let training = ck
            .meta
            .get("training")
            .ok_or_else(|| Error::MissingModel("checkpoint has no training state".into()))?;
        let mut config: TrainConfig = serde_json::from_value(training["config"].clone())
            .map_err(|e| Error::parse("checkpoint training config", e))?;
        if let Some(o) = overrides {
            config.iterations = o.iterations;
            config.log_every = o.log_every;
            config.checkpoint_every = o.checkpoint_every;
        }
        let step = as_u64(&training["step"], "step")?;
        let model = MotionModel::from_checkpoint(ck)?;
        let mut optimizer = AdamW::new(config.optimizer, &model.denoiser.store);
        optimizer.step = as_u64(&training["optimizer_step"], "optimizer_step")?;
        let n = model.denoiser.store.len();
        if ck.tensors.len() != 3 * n {
            return Err(Error::Shape(format!(
                "checkpoint holds {} tensors; resuming needs {} (weights and two moments)",
                ck.tensors.len(),
                3 * n
            )));
        }
        optimizer.m = ck.tensors[n..2 * n].to_vec();
        optimizer.v = ck.tensors[2 * n..].to_vec();
        Self::assemble(model, config, optimizer, step, corpus)
    }
}

fn as_u64(v: &Value, what: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::parse("checkpoint training state", format!("`{what}` missing")))
}

/// Exponential moving average of a loss trace.
pub fn smoothed(losses: &[f64], decay: f64) -> Vec<f64> {
    let mut acc = None;
    losses
        .iter()
        .map(|&l| {
            let v = acc.map_or(l, |a: f64| decay * a + (1.0 - decay) * l);
            acc = Some(v);
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{default_group_map, default_vocabulary, synth_corpus_specs};

    fn corpus(n: usize, frames: usize) -> TrainingCorpus {
        let motions: Vec<_> = synth_corpus_specs(&[1, 4], n / 2, (0.5, 1.5), frames, 1)
            .iter()
            .map(|s| s.generate().unwrap())
            .collect();
        TrainingCorpus::from_motions(&motions, default_group_map(), default_vocabulary(), 16).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            latent_dimension: 16,
            attention_heads: 2,
            transformer_layers: 1,
            batch_size: 4,
            iterations: 6,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut t = Trainer::new(
            TrainConfig {
                learning_rate: 0.0,
                ..config()
            },
            corpus(4, 8),
        )
        .unwrap();
        let before = t.model.denoiser.store.clone();
        t.run(|_, _| Ok(())).unwrap();
        assert_eq!(t.model.denoiser.store, before);
    }

    #[test]
    fn resume_reproduces_loss_trace() {
        let data = corpus(4, 8);
        let mut full = Trainer::new(config(), data.clone()).unwrap();
        let full_log = full.run(|_, _| Ok(())).unwrap();

        let mut first = Trainer::new(
            TrainConfig {
                iterations: 3,
                ..config()
            },
            data.clone(),
        )
        .unwrap();
        first.run(|_, _| Ok(())).unwrap();
        let bytes = first.checkpoint().to_bytes();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let mut resumed = Trainer::resume(&ck, data, Some(&config())).unwrap();
        let rest = resumed.run(|_, _| Ok(())).unwrap();
        assert_eq!(rest, full_log[3..]);
        assert_eq!(resumed.model.denoiser.store, full.model.denoiser.store);
    }

    #[test]
    fn draws_depend_on_step_only() {
        let t = Trainer::new(config(), corpus(4, 8)).unwrap();
        assert_eq!(t.draw(5), t.draw(5));
        assert_ne!(t.draw(5), t.draw(6));
    }

    #[test]
    fn text_dropout_rate_matches() {
        let t = Trainer::new(
            TrainConfig {
                batch_size: 4000,
                ..config()
            },
            corpus(4, 8),
        )
        .unwrap();
        let dropped = t.draw(0).iter().filter(|b| b.text.is_none()).count() as f64 / 4000.0;
        assert!((dropped - 0.1).abs() < 0.02, "{dropped}");
    }

    #[test]
    fn learning_rate_decays_once() {
        let c = TrainConfig {
            lr_decay_iteration: 10,
            ..config()
        };
        assert_eq!(c.learning_rate_at(9), 1e-3);
        assert!((c.learning_rate_at(10) - 1e-4).abs() < 1e-18);
        assert!((c.learning_rate_at(1000) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn rejects_unknown_label_and_bad_config() {
        let m = crate::motion::synth_motion(0, 1.0, 1.0, 8, 0)
            .unwrap()
            .with_label(Some("a cat".into()));
        assert!(TrainingCorpus::from_motions(&[m], default_group_map(), default_vocabulary(), 16).is_err());
        let bad = TrainConfig {
            prediction_type: "epsilon".into(),
            ..config()
        };
        assert!(Trainer::new(bad, corpus(2, 8)).is_err());
    }

    #[test]
    fn smoothing_follows_trace() {
        assert_eq!(smoothed(&[4.0, 2.0], 0.5), vec![4.0, 3.0]);
    }
}
