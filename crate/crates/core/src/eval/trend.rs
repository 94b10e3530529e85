//! Metric-to-motion consistency: generate under scaled effort metrics and
//! test whether the measured metrics follow the scale.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laban::{laban_descriptors, LabanDescriptors, LabanFactor};
use super::{Series, SeriesMetric};
use crate::diffusion::{MotionModel, SamplerOptions};
use crate::effort::{effort_metrics, EffortMetrics, N_METRICS};
use crate::error::{Error, Result};

/// Effort multipliers 0.7, 0.8, …, 1.3.
pub fn default_scales() -> Vec<f64> {
    (7..=13).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSpec {
    pub prompts: Vec<String>,
    /// Unscaled metrics per prompt.
    pub base: Vec<EffortMetrics>,
    pub scales: Vec<f64>,
    pub seeds: Vec<u64>,
    pub frames: usize,
    pub steps: usize,
    pub guidance: f64,
    /// Regions whose metrics are scaled; `None` scales every region.
    pub scaled_regions: Option<Vec<usize>>,
}

impl TrendSpec {
    fn validate(&self, model: &MotionModel) -> Result<()> {
        if self.prompts.is_empty() || self.seeds.is_empty() {
            return Err(Error::Validation(
                "trend run needs at least one prompt and one seed".into(),
            ));
        }
        if self.base.len() != self.prompts.len() {
            return Err(Error::Validation(format!(
                "{} base metric sets for {} prompts",
                self.base.len(),
                self.prompts.len()
            )));
        }
        if self.scales.len() < 3 || !self.scales.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation(
                "scales must be strictly increasing with at least 3 levels".into(),
            ));
        }
        for p in &self.prompts {
            model.vocab.id_of(p)?;
        }
        let regions = model.groups().len();
        if let Some(b) = self.base.iter().find(|b| b.regions() != regions) {
            return Err(Error::Validation(format!(
                "base metrics cover {} regions, model has {regions}",
                b.regions()
            )));
        }
        Ok(())
    }
}

/// Measurements of one generated motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub action: String,
    pub scale: f64,
    pub seed: u64,
    pub metrics: Vec<[f64; N_METRICS]>,
    pub laban: LabanDescriptors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRates {
    pub peak: f64,
    pub collective: f64,
    pub weight: f64,
    pub time: f64,
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub spec: TrendSpec,
    pub regions: Vec<String>,
    pub samples: Vec<SampleRecord>,
    /// Seed-averaged structural series, one per (action, region, metric).
    pub structural: Vec<Series>,
    /// Seed-averaged Laban series, one per (action, descriptor).
    pub laban: Vec<Series>,
    pub rates: AggregateRates,
}

pub fn trend_run(model: &MotionModel, spec: &TrendSpec) -> Result<TrendReport> {
    spec.validate(model)?;
    let jobs: Vec<(usize, usize, u64)> = (0..spec.prompts.len())
        .flat_map(|p| (0..spec.scales.len()).flat_map(move |s| spec.seeds.iter().map(move |&seed| (p, s, seed))))
        .collect();
    let opts = |seed| SamplerOptions {
        steps: spec.steps,
        guidance: spec.guidance,
        seed,
    };
    let samples = jobs
        .par_iter()
        .map(|&(p, s, seed)| {
            let scale = spec.scales[s];
            let target = spec.base[p].scaled(scale, spec.scaled_regions.as_deref())?;
            let motion = model.generate(Some(&spec.prompts[p]), &target, spec.frames, opts(seed))?;
            Ok(SampleRecord {
                action: spec.prompts[p].clone(),
                scale,
                seed,
                metrics: effort_metrics(&motion, model.groups())?.rows().to_vec(),
                laban: laban_descriptors(&motion)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let regions: Vec<String> = model.groups().names().map(str::to_owned).collect();
    TrendReport::from_samples(spec.clone(), regions, samples)
}

impl TrendReport {
    pub fn from_samples(spec: TrendSpec, regions: Vec<String>, samples: Vec<SampleRecord>) -> Result<Self> {
        let (structural, laban) = analyse(&spec, &regions, &samples, None)?;
        let n = spec.scales.len();
        let (peak, collective) = super::structural_monotonicity(&structural, n)?;
        let l = super::laban_monotonicity(&laban, n)?;
        Ok(Self {
            rates: AggregateRates {
                peak,
                collective,
                weight: l.weight,
                time: l.time,
                flow: l.flow,
            },
            spec,
            regions,
            samples,
            structural,
            laban,
        })
    }

    /// Structural and Laban series of a single seed.
    pub fn series_for_seed(&self, seed: u64) -> Result<(Vec<Series>, Vec<Series>)> {
        analyse(&self.spec, &self.regions, &self.samples, Some(seed))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat series `action,region,metric,scale,seed,value`; Laban rows use the
    /// region name `skeleton`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Validation(format!("writing CSV: {e}"));
        out.write_record(["action", "region", "metric", "scale", "seed", "value"])
            .map_err(io)?;
        for s in &self.samples {
            let (scale, seed) = (s.scale.to_string(), s.seed.to_string());
            for (region, row) in self.regions.iter().zip(&s.metrics) {
                for (metric, value) in [SeriesMetric::Peak, SeriesMetric::Collective].iter().zip(row) {
                    out.write_record([&s.action, region, metric.name(), &scale, &seed, &value.to_string()])
                        .map_err(io)?;
                }
            }
            for f in LabanFactor::ALL {
                let value = s.laban.get(f).to_string();
                out.write_record([&s.action, "skeleton", f.name(), &scale, &seed, &value])
                    .map_err(io)?;
            }
        }
        out.flush().map_err(|e| Error::Validation(format!("writing CSV: {e}")))
    }
}

fn analyse(
    spec: &TrendSpec,
    regions: &[String],
    samples: &[SampleRecord],
    only_seed: Option<u64>,
) -> Result<(Vec<Series>, Vec<Series>)> {
    let seeds: Vec<u64> = match only_seed {
        Some(s) if spec.seeds.contains(&s) => vec![s],
        Some(s) => return Err(Error::Validation(format!("seed {s} is not part of the run"))),
        None => spec.seeds.clone(),
    };
    // (action, scale index) -> records over the selected seeds.
    let mut cells: BTreeMap<(&str, usize), Vec<&SampleRecord>> = BTreeMap::new();
    for r in samples.iter().filter(|r| seeds.contains(&r.seed)) {
        let k = spec
            .scales
            .iter()
            .position(|&s| s == r.scale)
            .ok_or_else(|| Error::Validation(format!("sample at unexpected scale {}", r.scale)))?;
        cells.entry((r.action.as_str(), k)).or_default().push(r);
    }
    let mean_of = |action: &str, f: &dyn Fn(&SampleRecord) -> f64| -> Result<Vec<f64>> {
        (0..spec.scales.len())
            .map(|k| {
                let recs = cells
                    .get(&(action, k))
                    .filter(|v| v.len() == seeds.len())
                    .ok_or_else(|| {
                        Error::Validation(format!("missing samples for {action:?} at scale {}", spec.scales[k]))
                    })?;
                Ok(recs.iter().map(|r| f(r)).sum::<f64>() / recs.len() as f64)
            })
            .collect()
    };
    let mut structural = Vec::new();
    let mut laban = Vec::new();
    for action in &spec.prompts {
        for (g, region) in regions.iter().enumerate() {
            for (c, metric) in [SeriesMetric::Peak, SeriesMetric::Collective].into_iter().enumerate() {
                let values = mean_of(action, &|r| r.metrics[g][c])?;
                structural.push(Series::new(action, region, metric, &spec.scales, values)?);
            }
        }
        for f in LabanFactor::ALL {
            let values = mean_of(action, &|r| r.laban.get(f))?;
            laban.push(Series::new(action, "skeleton", f.into(), &spec.scales, values)?);
        }
    }
    Ok((structural, laban))
}

/// One row of the flat CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CsvRow {
    pub action: String,
    pub region: String,
    pub metric: String,
    pub scale: f64,
    pub seed: u64,
    pub value: f64,
}

pub fn read_csv(r: impl Read) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse("trend CSV", e))
}
