//! Resolved invocations. Each subcommand is turned into a fully explicit
//! record before it executes; the same record, stored as `run.json`, replays
//! the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use effort_core::diffusion::TrainConfig;
use effort_core::eval::default_scales;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{
    AugmentArgs, BaselineArgs, Common, ExtractArgs, GenerateArgs, SamplingArgs, SynthArgs, TrainArgs, TrendArgs,
};
use crate::UsageError;

pub const VERSION: &str = env!("EFFORTGEN_VERSION");
pub const RUN_FILE: &str = effort_core::augment::RUN_RECORD_NAME;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub version: String,
    pub invocation: Invocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    MetricsExtract(ExtractRun),
    MetricsBaseline(BaselineRun),
    Synth(SynthRun),
    Augment(AugmentRun),
    Train(TrainRun),
    Generate(GenerateRun),
    EvaluateTrend(TrendRun),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractRun {
    pub input: PathBuf,
    pub groups: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub actions: Vec<usize>,
    pub per_action: usize,
    pub frames: usize,
    pub amplitude: [f64; 2],
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            actions: vec![1, 4, 6, 10],
            per_action: 16,
            frames: 120,
            amplitude: [0.4, 1.6],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub out_dir: PathBuf,
    pub params: SynthParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentParams {
    pub k: Vec<usize>,
    pub m: Vec<usize>,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { k: vec![1], m: vec![1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRun {
    pub input_dir: PathBuf,
    pub out_dir: PathBuf,
    pub groups: Option<PathBuf>,
    pub params: AugmentParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub data: PathBuf,
    pub out: PathBuf,
    pub log: PathBuf,
    pub groups: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    pub frames: usize,
    pub steps: usize,
    pub guidance: f64,
    /// Effort multipliers; unset means 1.0 for `generate` and 0.7–1.3 for
    /// trend runs. Resolution always fills it in.
    pub scales: Option<Vec<f64>>,
    /// Scaled regions by name; `None` scales all of them.
    pub regions: Option<Vec<String>>,
    /// Base metrics file; `None` uses the baseline table.
    pub metrics: Option<PathBuf>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            frames: 120,
            steps: 50,
            guidance: 7.5,
            scales: None,
            regions: None,
            metrics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct GenerateParams {
    pub prompt: Option<String>,
    pub seed: u64,
    pub sampling: SamplingParams,
    pub set_metric: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRun {
    pub model: PathBuf,
    pub out_dir: PathBuf,
    pub params: GenerateParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendParams {
    /// `None` evaluates every prompt of the model vocabulary.
    pub prompts: Option<Vec<String>>,
    pub seeds: Vec<u64>,
    pub sampling: SamplingParams,
}

impl Default for TrendParams {
    fn default() -> Self {
        Self {
            prompts: None,
            seeds: vec![0, 1, 2],
            sampling: SamplingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRun {
    pub model: PathBuf,
    pub out_dir: PathBuf,
    pub params: TrendParams,
}

/// Absolute form of a path, so a record replays from any directory.
fn abs(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn abs_opt(p: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    p.as_deref().map(abs).transpose()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| effort_core::Error::Parse {
            what: format!("config {}", path.display()),
            message: e.to_string(),
        })
        .map_err(Into::into)
}

fn base_params<T: DeserializeOwned + Default>(common: &Common) -> Result<T> {
    match &common.config {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn no_config(common: &Common, what: &str) -> Result<()> {
    match &common.config {
        Some(_) => Err(UsageError(format!("`{what}` takes no --config")).into()),
        None => Ok(()),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn resolve_extract(a: &ExtractArgs) -> Result<Invocation> {
    no_config(&a.common, "metrics extract")?;
    Ok(Invocation::MetricsExtract(ExtractRun {
        input: abs(&a.input)?,
        groups: abs_opt(&a.groups)?,
        out: abs_opt(&a.out)?,
    }))
}

pub fn resolve_baseline(a: &BaselineArgs) -> Result<Invocation> {
    no_config(&a.common, "metrics baseline")?;
    Ok(Invocation::MetricsBaseline(BaselineRun { out: abs_opt(&a.out)? }))
}

pub fn resolve_synth(a: &SynthArgs) -> Result<Invocation> {
    let mut p: SynthParams = base_params(&a.common)?;
    set(&mut p.actions, a.actions.clone());
    set(&mut p.per_action, a.per_action);
    set(&mut p.frames, a.frames);
    set(&mut p.amplitude, a.amplitude);
    set(&mut p.seed, a.common.seed);
    Ok(Invocation::Synth(SynthRun {
        out_dir: abs(&a.out_dir)?,
        params: p,
    }))
}

pub fn resolve_augment(a: &AugmentArgs) -> Result<Invocation> {
    let mut p: AugmentParams = base_params(&a.common)?;
    set(&mut p.k, a.k.clone());
    set(&mut p.m, a.m.clone());
    Ok(Invocation::Augment(AugmentRun {
        input_dir: abs(&a.input_dir)?,
        out_dir: abs(&a.out_dir)?,
        groups: abs_opt(&a.groups)?,
        params: p,
    }))
}

pub fn resolve_train(a: &TrainArgs) -> Result<Invocation> {
    let mut c: TrainConfig = base_params(&a.common)?;
    set(&mut c.iterations, a.iterations);
    set(&mut c.batch_size, a.batch_size);
    set(&mut c.learning_rate, a.learning_rate);
    set(&mut c.seed, a.common.seed);
    let out = abs(&a.out)?;
    let log = match &a.log {
        Some(l) => abs(l)?,
        None => {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".loss.csv");
            out.with_file_name(name)
        }
    };
    Ok(Invocation::Train(TrainRun {
        data: abs(&a.data)?,
        out,
        log,
        groups: abs_opt(&a.groups)?,
        resume: abs_opt(&a.resume)?,
        config: c,
    }))
}

fn apply_sampling(p: &mut SamplingParams, a: &SamplingArgs, fallback: Vec<f64>) -> Result<()> {
    set(&mut p.frames, a.frames);
    set(&mut p.steps, a.steps);
    set(&mut p.guidance, a.guidance);
    if let Some(s) = &a.scale {
        p.scales = Some(s.0.clone());
    }
    p.scales.get_or_insert(fallback);
    if a.regions.is_some() {
        p.regions = a.regions.clone();
    }
    if a.metrics.is_some() {
        p.metrics = abs_opt(&a.metrics)?;
    }
    Ok(())
}

pub fn resolve_generate(a: &GenerateArgs) -> Result<Invocation> {
    let mut p: GenerateParams = base_params(&a.common)?;
    if a.prompt.is_some() {
        p.prompt = a.prompt.clone();
    }
    set(&mut p.seed, a.common.seed);
    apply_sampling(&mut p.sampling, &a.sampling, vec![1.0])?;
    p.set_metric.extend(a.set_metric.iter().cloned());
    Ok(Invocation::Generate(GenerateRun {
        model: abs(&a.sampling.model)?,
        out_dir: abs(&a.sampling.out_dir)?,
        params: p,
    }))
}

pub fn resolve_trend(a: &TrendArgs) -> Result<Invocation> {
    let mut p: TrendParams = base_params(&a.common)?;
    if a.prompts.is_some() {
        p.prompts = a.prompts.clone();
    }
    if let Some(s) = a.common.seed {
        let n = p.seeds.len().max(1) as u64;
        p.seeds = (s..s + n).collect();
    }
    set(&mut p.seeds, a.seeds.clone());
    apply_sampling(&mut p.sampling, &a.sampling, default_scales())?;
    Ok(Invocation::EvaluateTrend(TrendRun {
        model: abs(&a.sampling.model)?,
        out_dir: abs(&a.sampling.out_dir)?,
        params: p,
    }))
}

impl Invocation {
    /// Default location of the run record.
    pub fn default_run_json(&self) -> PathBuf {
        let beside = |f: &Path| f.parent().map(|d| d.join(RUN_FILE)).unwrap_or_else(|| RUN_FILE.into());
        match self {
            Invocation::MetricsExtract(r) => r.out.as_deref().map(beside).unwrap_or_else(|| RUN_FILE.into()),
            Invocation::MetricsBaseline(r) => r.out.as_deref().map(beside).unwrap_or_else(|| RUN_FILE.into()),
            Invocation::Synth(r) => r.out_dir.join(RUN_FILE),
            Invocation::Augment(r) => r.out_dir.join(RUN_FILE),
            Invocation::Train(r) => beside(&r.out),
            Invocation::Generate(r) => r.out_dir.join(RUN_FILE),
            Invocation::EvaluateTrend(r) => r.out_dir.join(RUN_FILE),
        }
    }

    /// Moves every output into `dir`, keeping file names.
    pub fn redirect(&mut self, dir: &Path) {
        let into = |f: &mut PathBuf| {
            if let Some(name) = f.file_name() {
                *f = dir.join(name);
            }
        };
        match self {
            Invocation::MetricsExtract(r) => r.out.iter_mut().for_each(into),
            Invocation::MetricsBaseline(r) => r.out.iter_mut().for_each(into),
            Invocation::Synth(r) => r.out_dir = dir.into(),
            Invocation::Augment(r) => r.out_dir = dir.into(),
            Invocation::Train(r) => {
                into(&mut r.out);
                into(&mut r.log);
            }
            Invocation::Generate(r) => r.out_dir = dir.into(),
            Invocation::EvaluateTrend(r) => r.out_dir = dir.into(),
        }
    }
}

impl RunRecord {
    pub fn new(invocation: Invocation) -> Self {
        Self {
            version: VERSION.to_owned(),
            invocation,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut text = serde_json::to_string_pretty(self).expect("run record serializes");
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}
