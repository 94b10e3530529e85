//! Effort-oriented evaluation: metric MAE, structural and Laban
//! monotonicity via Spearman rank tests, and trend reports.

pub mod laban;
pub mod stats;
pub mod trend;

use serde::{Deserialize, Serialize};

pub use laban::{laban_descriptors, LabanDescriptors, LabanFactor};
pub use stats::{average_ranks, spearman, Spearman};
pub use trend::{default_scales, read_csv, trend_run, AggregateRates, CsvRow, SampleRecord, TrendReport, TrendSpec};

use crate::effort::EffortMetrics;
use crate::error::{Error, Result};

/// Published full-model values, kept for reference only.
pub mod reference {
    pub const EFFORT_MAE_PEAK: f64 = 0.0597;
    pub const EFFORT_MAE_COLLECTIVE: f64 = 1.574;
    pub const STRUCTURAL_PEAK_PCT: f64 = 74.5;
    pub const STRUCTURAL_COLLECTIVE_PCT: f64 = 60.2;
    pub const LABAN_WEIGHT_PCT: f64 = 78.6;
    pub const LABAN_FLOW_PCT: f64 = 85.7;
    pub const LABAN_TIME_PCT: f64 = 92.9;
    pub const FID: f64 = 0.056;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesMetric {
    Peak,
    Collective,
    Weight,
    Time,
    Flow,
}

impl SeriesMetric {
    pub fn name(self) -> &'static str {
        match self {
            SeriesMetric::Peak => "peak",
            SeriesMetric::Collective => "collective",
            SeriesMetric::Weight => "weight",
            SeriesMetric::Time => "time",
            SeriesMetric::Flow => "flow",
        }
    }
}

impl From<LabanFactor> for SeriesMetric {
    fn from(f: LabanFactor) -> Self {
        match f {
            LabanFactor::Weight => SeriesMetric::Weight,
            LabanFactor::Time => SeriesMetric::Time,
            LabanFactor::Flow => SeriesMetric::Flow,
        }
    }
}

/// A measured quantity across effort scales with its rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub action: String,
    pub region: String,
    pub metric: SeriesMetric,
    pub values: Vec<f64>,
    pub spearman: Spearman,
    pub pass: bool,
}

impl Series {
    pub fn new(action: &str, region: &str, metric: SeriesMetric, scales: &[f64], values: Vec<f64>) -> Result<Self> {
        let spearman = spearman(scales, &values)?;
        Ok(Self {
            action: action.to_owned(),
            region: region.to_owned(),
            metric,
            values,
            pass: spearman.passes(),
            spearman,
        })
    }
}

/// Mean absolute error of the peak and collective columns over all samples
/// and regions.
pub fn effort_mae(generated: &[EffortMetrics], target: &[EffortMetrics]) -> Result<(f64, f64)> {
    if generated.len() != target.len() || generated.is_empty() {
        return Err(Error::Shape(format!(
            "effort MAE over {} generated and {} target sets",
            generated.len(),
            target.len()
        )));
    }
    let (mut sum, mut n) = ([0.0; 2], 0usize);
    for (g, t) in generated.iter().zip(target) {
        if g.regions() != t.regions() {
            return Err(Error::Shape(format!("{} vs {} regions", g.regions(), t.regions())));
        }
        for (a, b) in g.rows().iter().zip(t.rows()) {
            sum[0] += (a[0] - b[0]).abs();
            sum[1] += (a[1] - b[1]).abs();
            n += 1;
        }
    }
    Ok((sum[0] / n as f64, sum[1] / n as f64))
}

fn pass_rate(series: &[Series], metric: SeriesMetric, n_scales: usize) -> Result<f64> {
    let mut total = 0usize;
    let mut passed = 0usize;
    for s in series.iter().filter(|s| s.metric == metric) {
        if s.values.len() != n_scales {
            return Err(Error::Validation(format!(
                "{} / {} / {} has {} scale levels, expected {n_scales}",
                s.action,
                s.region,
                metric.name(),
                s.values.len()
            )));
        }
        total += 1;
        passed += usize::from(s.pass);
    }
    if total == 0 {
        return Err(Error::Validation(format!("no {} series", metric.name())));
    }
    Ok(100.0 * passed as f64 / total as f64)
}

/// Percentages of (action, region) series passing, as `(peak, collective)`.
pub fn structural_monotonicity(series: &[Series], n_scales: usize) -> Result<(f64, f64)> {
    Ok((
        pass_rate(series, SeriesMetric::Peak, n_scales)?,
        pass_rate(series, SeriesMetric::Collective, n_scales)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabanRates {
    pub weight: f64,
    pub flow: f64,
    pub time: f64,
}

/// Percentages of actions whose Laban descriptors pass.
pub fn laban_monotonicity(series: &[Series], n_scales: usize) -> Result<LabanRates> {
    Ok(LabanRates {
        weight: pass_rate(series, SeriesMetric::Weight, n_scales)?,
        flow: pass_rate(series, SeriesMetric::Flow, n_scales)?,
        time: pass_rate(series, SeriesMetric::Time, n_scales)?,
    })
}
