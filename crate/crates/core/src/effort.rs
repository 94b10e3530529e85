//! Per-region effort metrics: the peak and collective positional change of
//! every anatomical region, which form the conditioning signal.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{GroupMap, MotionSequence, REGION_NAMES};

/// Metrics per region: peak change and collective change.
pub const N_METRICS: usize = 2;

/// `[regions × 2]` table; column 0 is the peak change (meters/frame), column
/// 1 the collective change (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; N_METRICS]>", into = "Vec<[f64; N_METRICS]>")]
pub struct EffortMetrics {
    rows: Vec<[f64; N_METRICS]>,
}

impl TryFrom<Vec<[f64; N_METRICS]>> for EffortMetrics {
    type Error = Error;

    fn try_from(rows: Vec<[f64; N_METRICS]>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<EffortMetrics> for Vec<[f64; N_METRICS]> {
    fn from(m: EffortMetrics) -> Self {
        m.rows
    }
}

impl EffortMetrics {
    pub fn new(rows: Vec<[f64; N_METRICS]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("effort metrics need at least one region".into()));
        }
        for (g, r) in rows.iter().enumerate() {
            if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(format!(
                    "region {g} metrics {r:?} must be finite and non-negative"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn zeros(regions: usize) -> Self {
        Self {
            rows: vec![[0.0; N_METRICS]; regions],
        }
    }

    pub fn regions(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[[f64; N_METRICS]] {
        &self.rows
    }

    pub fn peak(&self, region: usize) -> f64 {
        self.rows[region][0]
    }

    pub fn collective(&self, region: usize) -> f64 {
        self.rows[region][1]
    }

    /// Row-major `[regions × 2]` flattening.
    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            rows: perm.iter().map(|&p| self.rows[p]).collect(),
        }
    }

    /// Multiplies the selected regions' rows (all when `regions` is `None`).
    pub fn scaled(&self, multiplier: f64, regions: Option<&[usize]>) -> Result<Self> {
        if !(multiplier >= 0.0 && multiplier.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "multiplier {multiplier} must be finite and >= 0"
            )));
        }
        let mut rows = self.rows.clone();
        for (g, row) in rows.iter_mut().enumerate() {
            if regions.is_none_or(|sel| sel.contains(&g)) {
                row[0] *= multiplier;
                row[1] *= multiplier;
            }
        }
        Self::new(rows)
    }

    /// Direct assignment of one region's pair.
    pub fn with_region(&self, region: usize, peak: f64, collective: f64) -> Result<Self> {
        if region >= self.rows.len() {
            return Err(Error::InvalidParameter(format!(
                "region {region} out of range for {} regions",
                self.rows.len()
            )));
        }
        let mut rows = self.rows.clone();
        rows[region] = [peak, collective];
        Self::new(rows)
    }

    /// Element-wise mean of a non-empty set of equally shaped metrics.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a EffortMetrics>) -> Result<Self> {
        let mut acc: Option<Vec<[f64; N_METRICS]>> = None;
        let mut n = 0usize;
        for m in items {
            let acc = acc.get_or_insert_with(|| vec![[0.0; N_METRICS]; m.regions()]);
            if acc.len() != m.regions() {
                return Err(Error::Shape("metrics with different region counts".into()));
            }
            for (a, r) in acc.iter_mut().zip(&m.rows) {
                a[0] += r[0];
                a[1] += r[1];
            }
            n += 1;
        }
        let mut rows = acc.ok_or_else(|| Error::Validation("mean of no metrics".into()))?;
        for r in &mut rows {
            r[0] /= n as f64;
            r[1] /= n as f64;
        }
        Self::new(rows)
    }
}

/// `entry(t, j) = ‖pos[t+1, j] − pos[t, j]‖₂`, laid out `[(T−1) × joints]`.
pub fn joint_diffs(m: &MotionSequence) -> Vec<f64> {
    let nj = m.n_joints();
    let p = m.positions();
    p[nj..]
        .iter()
        .zip(p)
        .map(|(next, cur)| norm3(sub3(*next, *cur)))
        .collect()
}

/// Mean of the joint diffs over each region, laid out `[(T−1) × regions]`.
pub fn group_diffs(diffs: &[f64], n_joints: usize, groups: &GroupMap) -> Result<Vec<f64>> {
    if n_joints != groups.n_joints() || !diffs.len().is_multiple_of(n_joints) {
        return Err(Error::Shape(format!(
            "{} joint diffs do not match a {}-joint group map",
            diffs.len(),
            groups.n_joints()
        )));
    }
    let ng = groups.len();
    let mut out = Vec::with_capacity(diffs.len() / n_joints * ng);
    for row in diffs.chunks(n_joints) {
        for g in groups.groups() {
            let sum: f64 = g.joints.iter().map(|&j| row[j]).sum();
            out.push(sum / g.joints.len() as f64);
        }
    }
    Ok(out)
}

/// Peak (max over frames) and collective (sum over frames) region change.
pub fn effort_metrics(m: &MotionSequence, groups: &GroupMap) -> Result<EffortMetrics> {
    groups.check_motion(m)?;
    let gd = group_diffs(&joint_diffs(m), m.n_joints(), groups)?;
    let ng = groups.len();
    let mut rows = vec![[0.0f64; N_METRICS]; ng];
    for step in gd.chunks(ng) {
        for (row, &d) in rows.iter_mut().zip(step) {
            row[0] = row[0].max(d);
            row[1] += d;
        }
    }
    EffortMetrics::new(rows)
}

/// Average per-region metrics of normal-paced HumanML3D motions, ordered
/// root, left lower, right lower, spine, left upper, right upper, head.
pub const BASELINE: [[f64; N_METRICS]; 7] = [
    [0.010, 1.256],
    [0.015, 1.279],
    [0.015, 1.279],
    [0.010, 1.252],
    [0.014, 1.293],
    [0.014, 1.295],
    [0.012, 1.262],
];

pub fn baseline_metrics() -> EffortMetrics {
    EffortMetrics {
        rows: BASELINE.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub regions: Vec<String>,
    pub peak: Vec<f64>,
    pub collective: Vec<f64>,
}

impl MetricsFile {
    pub fn from_metrics(m: &EffortMetrics, names: &[&str]) -> Self {
        Self {
            regions: names.iter().map(|s| s.to_string()).collect(),
            peak: m.rows.iter().map(|r| r[0]).collect(),
            collective: m.rows.iter().map(|r| r[1]).collect(),
        }
    }

    pub fn with_group_names(m: &EffortMetrics, groups: &GroupMap) -> Self {
        let names: Vec<&str> = groups.names().collect();
        Self::from_metrics(m, &names)
    }

    pub fn with_default_names(m: &EffortMetrics) -> Self {
        Self::from_metrics(m, &REGION_NAMES[..m.regions().min(REGION_NAMES.len())])
    }

    pub fn to_metrics(&self) -> Result<EffortMetrics> {
        if self.peak.len() != self.collective.len() || self.peak.len() != self.regions.len() {
            return Err(Error::Validation("metrics file columns have different lengths".into()));
        }
        EffortMetrics::new(self.peak.iter().zip(&self.collective).map(|(&p, &c)| [p, c]).collect())
    }
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<EffortMetrics> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: MetricsFile = serde_json::from_str(&text).map_err(|e| Error::parse("metrics JSON", e))?;
    file.to_metrics()
}

#[inline]
pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
