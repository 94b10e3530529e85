use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use effort_core::augment::augment_corpus;
use effort_core::diffusion::{MotionModel, SamplerOptions, Trainer, TrainingCorpus};
use effort_core::effort::{load_metrics, MetricsFile};
use effort_core::eval::{trend_run, TrendSpec};
use effort_core::motion::{load_group_map, save_motion, synth_corpus_specs, ACTIONS};
use effort_core::nn::Checkpoint;
use effort_core::{
    baseline_metrics, default_group_map, default_vocabulary, effort_metrics, EffortMetrics, Error, GroupMap,
};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::run::{
    AugmentRun, BaselineRun, ExtractRun, GenerateRun, Invocation, SamplingParams, SynthRun, TrainRun, TrendRun,
};

pub fn execute(inv: &Invocation) -> Result<()> {
    match inv {
        Invocation::MetricsExtract(r) => extract(r),
        Invocation::MetricsBaseline(r) => baseline(r),
        Invocation::Synth(r) => synth(r),
        Invocation::Augment(r) => augment(r),
        Invocation::Train(r) => train(r),
        Invocation::Generate(r) => generate(r),
        Invocation::EvaluateTrend(r) => trend(r),
    }
}

fn groups_or_default(path: &Option<std::path::PathBuf>) -> Result<GroupMap> {
    Ok(match path {
        Some(p) => load_group_map(p)?,
        None => default_group_map(),
    })
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))?;
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    Ok(())
}

fn emit(out: &Option<std::path::PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes()).context("writing stdout")?;
            Ok(())
        }
    }
}

fn extract(r: &ExtractRun) -> Result<()> {
    let groups = groups_or_default(&r.groups)?;
    let motion = effort_core::motion::load_motion(&r.input)?;
    let metrics = effort_metrics(&motion, &groups)?;
    emit(&r.out, &pretty(&MetricsFile::with_group_names(&metrics, &groups)))
}

fn baseline(r: &BaselineRun) -> Result<()> {
    emit(&r.out, &pretty(&MetricsFile::with_default_names(&baseline_metrics())))
}

fn slug(prompt: &str) -> String {
    prompt
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn synth(r: &SynthRun) -> Result<()> {
    let p = &r.params;
    if let Some(&bad) = p.actions.iter().find(|&&a| a >= ACTIONS.len()) {
        return Err(Error::InvalidParameter(format!("action id {bad} outside 0..{}", ACTIONS.len())).into());
    }
    create_dir(&r.out_dir)?;
    let specs = synth_corpus_specs(
        &p.actions,
        p.per_action,
        (p.amplitude[0], p.amplitude[1]),
        p.frames,
        p.seed,
    );
    specs.par_iter().enumerate().try_for_each(|(i, s)| -> Result<()> {
        let motion = s.generate()?;
        let name = format!("{i:04}_{}.json", slug(ACTIONS[s.action_id].prompt));
        save_motion(&motion, r.out_dir.join(name))?;
        Ok(())
    })?;
    println!("wrote {} motions to {}", specs.len(), r.out_dir.display());
    Ok(())
}

fn augment(r: &AugmentRun) -> Result<()> {
    let groups = groups_or_default(&r.groups)?;
    let report = augment_corpus(&r.input_dir, &r.out_dir, &r.params.k, &r.params.m, &groups)?;
    for (what, why) in &report.skipped {
        log::warn!("skipped {what}: {why}");
    }
    println!(
        "wrote {} motions to {} ({} skipped)",
        report.records.len(),
        r.out_dir.display(),
        report.skipped.len()
    );
    Ok(())
}

fn train(r: &TrainRun) -> Result<()> {
    let cfg = &r.config;
    let mut trainer = match &r.resume {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingModel(format!("no checkpoint at {}", path.display())).into());
            }
            let ck = Checkpoint::load(path)?;
            let model = MotionModel::from_checkpoint(&ck)?;
            let corpus = TrainingCorpus::load_dir(
                &r.data,
                model.groups().clone(),
                model.vocab.clone(),
                model.denoiser.config.latent_dim,
            )?;
            Trainer::resume(&ck, corpus, Some(cfg))?
        }
        None => {
            let groups = groups_or_default(&r.groups)?;
            let corpus = TrainingCorpus::load_dir(&r.data, groups, default_vocabulary(), cfg.latent_dimension)?;
            Trainer::new(cfg.clone(), corpus)?
        }
    };
    if let Some(dir) = r.out.parent() {
        create_dir(dir)?;
    }
    info!("training from step {} to {}", trainer.step(), trainer.config.iterations);
    let out = r.out.clone();
    let log = trainer.run(|t, rec| {
        if t.config.log_every > 0 && rec.step % t.config.log_every == 0 {
            info!(
                "step {} loss {:.5} lr {:.2e} |g| {:.4}",
                rec.step, rec.loss, rec.learning_rate, rec.grad_norm
            );
        }
        if t.config.checkpoint_every > 0 && t.step() % t.config.checkpoint_every == 0 {
            t.checkpoint().save(&out)?;
        }
        Ok(())
    })?;
    trainer.checkpoint().save(&r.out)?;

    let mut csv = String::from("step,loss,learning_rate,grad_norm\n");
    for rec in &log {
        writeln!(csv, "{},{},{},{}", rec.step, rec.loss, rec.learning_rate, rec.grad_norm).expect("string write");
    }
    write_file(&r.log, &csv)?;
    match log.last() {
        Some(last) => println!(
            "trained to step {} (loss {:.5}); checkpoint {}",
            trainer.step(),
            last.loss,
            r.out.display()
        ),
        None => println!("already at step {}; checkpoint {}", trainer.step(), r.out.display()),
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<MotionModel> {
    Ok(MotionModel::load(path)?)
}

/// Base metrics and scaled region indices of a sampling run.
fn sampling_targets(p: &SamplingParams, model: &MotionModel) -> Result<(EffortMetrics, Option<Vec<usize>>)> {
    let base = match &p.metrics {
        Some(path) => load_metrics(path)?,
        None => baseline_metrics(),
    };
    let regions = p
        .regions
        .as_ref()
        .map(|names| {
            names
                .iter()
                .map(|n| region_index(model.groups(), n))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok((base, regions))
}

fn region_index(groups: &GroupMap, name: &str) -> Result<usize> {
    groups.index_of(name).ok_or_else(|| {
        let known: Vec<&str> = groups.names().collect();
        Error::Validation(format!("unknown region {name:?}; known regions: {}", known.join(", "))).into()
    })
}

fn scales(p: &SamplingParams, fallback: &[f64]) -> Result<Vec<f64>> {
    let s = p.scales.clone().unwrap_or_else(|| fallback.to_vec());
    if s.is_empty() {
        return Err(Error::Validation("no scales given".into()).into());
    }
    Ok(s)
}

#[derive(Serialize)]
struct SampleLine<'a> {
    file: String,
    prompt: Option<&'a str>,
    scale: f64,
    seed: u64,
    target: MetricsFile,
    measured: MetricsFile,
}

fn generate(r: &GenerateRun) -> Result<()> {
    let p = &r.params;
    let model = load_model(&r.model)?;
    let (base, regions) = sampling_targets(&p.sampling, &model)?;
    let scales = scales(&p.sampling, &[1.0])?;
    let mut sorted = scales.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation("duplicate scale values".into()).into());
    }
    let assignments = p
        .set_metric
        .iter()
        .map(|(name, v)| Ok((region_index(model.groups(), name)?, *v)))
        .collect::<Result<Vec<_>>>()?;
    let prompt = p.prompt.as_deref().filter(|s| !s.is_empty());
    model.prompt_id(prompt)?;
    create_dir(&r.out_dir)?;

    let opts = SamplerOptions {
        steps: p.sampling.steps,
        guidance: p.sampling.guidance,
        seed: p.seed,
    };
    let lines = scales
        .par_iter()
        .map(|&scale| -> Result<(String, String)> {
            let mut target = base.scaled(scale, regions.as_deref())?;
            for &(g, [peak, collective]) in &assignments {
                target = target.with_region(g, peak, collective)?;
            }
            let motion = model.generate(prompt, &target, p.sampling.frames, opts)?;
            let file = format!("sample_s{scale}.json");
            save_motion(&motion, r.out_dir.join(&file))?;
            let measured = effort_metrics(&motion, model.groups())?;
            let line = SampleLine {
                file: file.clone(),
                prompt,
                scale,
                seed: p.seed,
                target: MetricsFile::with_group_names(&target, model.groups()),
                measured: MetricsFile::with_group_names(&measured, model.groups()),
            };
            Ok((file, serde_json::to_string(&line).expect("sample line serializes")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = String::new();
    for (scale, (file, line)) in scales.iter().zip(&lines) {
        text.push_str(line);
        text.push('\n');
        println!("scale {scale}: {file}");
    }
    write_file(&r.out_dir.join("samples.jsonl"), &text)?;
    Ok(())
}

fn trend(r: &TrendRun) -> Result<()> {
    let p = &r.params;
    let model = load_model(&r.model)?;
    let (base, regions) = sampling_targets(&p.sampling, &model)?;
    let prompts = p.prompts.clone().unwrap_or_else(|| model.vocab.entries().to_vec());
    let spec = TrendSpec {
        base: vec![base; prompts.len()],
        prompts,
        scales: scales(&p.sampling, &effort_core::eval::default_scales())?,
        seeds: p.seeds.clone(),
        frames: p.sampling.frames,
        steps: p.sampling.steps,
        guidance: p.sampling.guidance,
        scaled_regions: regions,
    };
    info!(
        "trend run: {} prompts x {} scales x {} seeds",
        spec.prompts.len(),
        spec.scales.len(),
        spec.seeds.len()
    );
    let report = trend_run(&model, &spec)?;
    create_dir(&r.out_dir)?;
    let mut json = report.to_json();
    json.push('\n');
    write_file(&r.out_dir.join("report.json"), &json)?;
    let csv_path = r.out_dir.join("series.csv");
    let file = fs::File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    report.write_csv(std::io::BufWriter::new(file))?;

    let rates = report.rates;
    println!("structural series: {}", report.structural.len());
    println!("peak monotonic: {:.1}%", rates.peak);
    println!("collective monotonic: {:.1}%", rates.collective);
    println!(
        "laban weight / time / flow: {:.1}% / {:.1}% / {:.1}%",
        rates.weight, rates.time, rates.flow
    );
    Ok(())
}
