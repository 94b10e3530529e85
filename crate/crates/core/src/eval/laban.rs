use serde::{Deserialize, Serialize};

use crate::effort::{norm3, sub3};
use crate::error::{Error, Result};
use crate::motion::MotionSequence;

/// Whole-skeleton Laban effort descriptors from forward differences, in
/// per-frame units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabanDescriptors {
    /// Peak over frames of `Σ_j ‖v‖²`.
    pub weight: f64,
    /// Peak over frames of `Σ_j ‖a‖`.
    pub time: f64,
    /// Peak over frames of `Σ_j ‖jerk‖`.
    pub flow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabanFactor {
    Weight,
    Time,
    Flow,
}

impl LabanFactor {
    pub const ALL: [LabanFactor; 3] = [LabanFactor::Weight, LabanFactor::Time, LabanFactor::Flow];

    pub fn name(self) -> &'static str {
        match self {
            LabanFactor::Weight => "weight",
            LabanFactor::Time => "time",
            LabanFactor::Flow => "flow",
        }
    }
}

impl LabanDescriptors {
    pub fn get(&self, f: LabanFactor) -> f64 {
        match f {
            LabanFactor::Weight => self.weight,
            LabanFactor::Time => self.time,
            LabanFactor::Flow => self.flow,
        }
    }
}

fn differences(x: &[[f64; 3]], nj: usize) -> Vec<[f64; 3]> {
    x.chunks(nj)
        .zip(x.chunks(nj).skip(1))
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| sub3(*q, *p)))
        .collect()
}

fn peak_frame_sum(x: &[[f64; 3]], nj: usize, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
    x.chunks(nj)
        .map(|frame| frame.iter().map(&f).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn laban_descriptors(m: &MotionSequence) -> Result<LabanDescriptors> {
    if m.frames() < 4 {
        return Err(Error::Validation(format!(
            "Laban descriptors need at least 4 frames, got {}",
            m.frames()
        )));
    }
    let nj = m.n_joints();
    let v = differences(m.positions(), nj);
    let a = differences(&v, nj);
    let j = differences(&a, nj);
    Ok(LabanDescriptors {
        weight: peak_frame_sum(&v, nj, |d| d.iter().map(|c| c * c).sum()),
        time: peak_frame_sum(&a, nj, |d| norm3(*d)),
        flow: peak_frame_sum(&j, nj, |d| norm3(*d)),
    })
}
