//! Pacing augmentation at fixed frame rate: dropping frames makes a motion
//! faster, inserting interpolated frames makes it slower.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effort::{effort_metrics, MetricsFile};
use crate::error::{Error, Result};
use crate::motion::{load_motion, save_motion, GroupMap, MotionSequence};

/// Largest accepted `k` / `m` unless a caller raises it.
pub const DEFAULT_MAX_PACING: usize = 2;

/// Keeps frames `0, k+1, 2(k+1), …`, dropping `k` frames between samples.
pub fn speed_up(m: &MotionSequence, k: usize) -> Result<MotionSequence> {
    speed_up_bounded(m, k, DEFAULT_MAX_PACING)
}

pub fn speed_up_bounded(m: &MotionSequence, k: usize, max_k: usize) -> Result<MotionSequence> {
    if k == 0 || k > max_k {
        return Err(Error::InvalidParameter(format!("frame skip k={k} outside 1..={max_k}")));
    }
    let kept: Vec<usize> = (0..m.frames()).step_by(k + 1).collect();
    if kept.len() < 2 {
        return Err(Error::Validation(format!(
            "{} frames are too short to skip {k} frames",
            m.frames()
        )));
    }
    let positions = kept.iter().flat_map(|&t| m.frame(t).iter().copied()).collect();
    MotionSequence::new(m.fps(), m.n_joints(), positions, m.label().map(str::to_owned))
}

/// Inserts `m_frames` linearly interpolated frames between each pair of
/// consecutive frames. Original frames are kept bit-exact.
pub fn slow_down(m: &MotionSequence, m_frames: usize) -> Result<MotionSequence> {
    slow_down_bounded(m, m_frames, DEFAULT_MAX_PACING)
}

pub fn slow_down_bounded(m: &MotionSequence, m_frames: usize, max_m: usize) -> Result<MotionSequence> {
    if m_frames == 0 || m_frames > max_m {
        return Err(Error::InvalidParameter(format!(
            "inserted frames m={m_frames} outside 1..={max_m}"
        )));
    }
    let t_old = m.frames();
    let nj = m.n_joints();
    let mut positions = Vec::with_capacity((t_old + (t_old - 1) * m_frames) * nj);
    for t in 0..t_old - 1 {
        let (a, b) = (m.frame(t), m.frame(t + 1));
        positions.extend_from_slice(a);
        for i in 1..=m_frames {
            let f = i as f64 / (m_frames + 1) as f64;
            positions.extend(a.iter().zip(b).map(|(p, q)| {
                [
                    p[0] + (q[0] - p[0]) * f,
                    p[1] + (q[1] - p[1]) * f,
                    p[2] + (q[2] - p[2]) * f,
                ]
            }));
        }
    }
    positions.extend_from_slice(m.frame(t_old - 1));
    MotionSequence::new(m.fps(), nj, positions, m.label().map(str::to_owned))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Original,
    Speedup,
    Slowdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub src: String,
    pub transform: Transform,
    pub param: usize,
    /// Output file name, relative to the manifest directory.
    pub out: String,
    pub metrics: MetricsFile,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentReport {
    pub records: Vec<ManifestRecord>,
    /// Inputs or variants that could not be produced, with the reason.
    pub skipped: Vec<(String, String)>,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";
const SIDECAR_SUFFIX: &str = ".metrics.json";
/// Invocation record the command-line tool leaves in its output directories.
pub const RUN_RECORD_NAME: &str = "run.json";

/// Motion files of a directory in name order, excluding metric sidecars
/// and run records.
pub fn motion_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(SIDECAR_SUFFIX) && name != RUN_RECORD_NAME
        })
        .collect();
    files.sort();
    Ok(files)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("motion");
    out.with_file_name(format!("{stem}{SIDECAR_SUFFIX}"))
}

/// Writes every input plus its `k` and `m` variants to `out_dir`, each with a
/// metrics sidecar, and a JSON-lines manifest recording provenance.
pub fn augment_corpus(
    in_dir: &Path,
    out_dir: &Path,
    ks: &[usize],
    ms: &[usize],
    groups: &GroupMap,
) -> Result<AugmentReport> {
    let inputs = motion_files(in_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    type PerFile = (Vec<ManifestRecord>, Vec<(String, String)>);
    let per_file: Vec<PerFile> = inputs
        .par_iter()
        .map(|src| augment_one(src, out_dir, ks, ms, groups))
        .collect::<Result<_>>()?;

    let mut report = AugmentReport::default();
    for (records, skipped) in per_file {
        report.records.extend(records);
        report.skipped.extend(skipped);
    }

    let manifest = out_dir.join(MANIFEST_NAME);
    let mut text = String::new();
    for r in &report.records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(report)
}

type FileOutcome = (Vec<ManifestRecord>, Vec<(String, String)>);

fn augment_one(src: &Path, out_dir: &Path, ks: &[usize], ms: &[usize], groups: &GroupMap) -> Result<FileOutcome> {
    let src_name = src.display().to_string();
    let motion = match load_motion(src) {
        Ok(m) => m,
        Err(e @ Error::Io { .. }) => return Err(e),
        Err(e) => return Ok((Vec::new(), vec![(src_name, e.to_string())])),
    };
    let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("motion");

    let mut variants = vec![(Transform::Original, 0, Ok(motion.clone()))];
    variants.extend(ks.iter().map(|&k| (Transform::Speedup, k, speed_up(&motion, k))));
    variants.extend(ms.iter().map(|&m| (Transform::Slowdown, m, slow_down(&motion, m))));

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (transform, param, result) in variants {
        let out_name = match transform {
            Transform::Original => format!("{stem}.json"),
            Transform::Speedup => format!("{stem}_speedup_k{param}.json"),
            Transform::Slowdown => format!("{stem}_slowdown_m{param}.json"),
        };
        let variant = match result.and_then(|v| effort_metrics(&v, groups).map(|e| (v, e))) {
            Ok(v) => v,
            Err(e) => {
                skipped.push((format!("{src_name} ({out_name})"), e.to_string()));
                continue;
            }
        };
        let (motion, metrics) = variant;
        let out = out_dir.join(&out_name);
        save_motion(&motion, &out)?;
        let metrics = MetricsFile::with_group_names(&metrics, groups);
        let sidecar = sidecar_path(&out);
        let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
        fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
        records.push(ManifestRecord {
            src: src_name.clone(),
            transform,
            param,
            out: out_name,
            metrics,
        });
    }
    Ok((records, skipped))
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("manifest line {}", i + 1), e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effort::{effort_metrics, joint_diffs};
    use crate::motion::{Group, T_POSE};

    fn line(frames: usize, step: f64) -> MotionSequence {
        let dir = [0.6, 0.0, 0.8];
        let positions = (0..frames)
            .map(|t| {
                let s = step * t as f64;
                [s * dir[0], s * dir[1], s * dir[2]]
            })
            .collect();
        MotionSequence::new(20, 1, positions, Some("a line".into())).unwrap()
    }

    fn one_group() -> GroupMap {
        GroupMap::new(vec![Group {
            name: "j".into(),
            joints: vec![0],
        }])
        .unwrap()
    }

    #[test]
    fn speed_up_keeps_every_other_frame() {
        let m = line(9, 0.01);
        let fast = speed_up(&m, 1).unwrap();
        assert_eq!(fast.frames(), 5);
        assert_eq!(fast.fps(), 20);
        for (i, t) in [0, 2, 4, 6, 8].into_iter().enumerate() {
            assert_eq!(fast.frame(i), m.frame(t));
        }
        for d in joint_diffs(&fast) {
            assert!((d - 0.02).abs() < 1e-12);
        }
        let faster = speed_up(&m, 2).unwrap();
        assert_eq!(faster.frames(), 3);
        for d in joint_diffs(&faster) {
            assert!((d - 0.03).abs() < 1e-12);
        }
        let e0 = effort_metrics(&m, &one_group()).unwrap();
        let e1 = effort_metrics(&fast, &one_group()).unwrap();
        assert!((e1.collective(0) - e0.collective(0)).abs() < 1e-12);
        assert!((e1.peak(0) - 2.0 * e0.peak(0)).abs() < 1e-12);
    }

    #[test]
    fn speed_up_frame_count_is_ceiling() {
        for frames in 3usize..20 {
            for k in 1..=2 {
                let expected = frames.div_ceil(k + 1);
                match speed_up(&line(frames, 0.1), k) {
                    Ok(fast) => assert_eq!(fast.frames(), expected),
                    Err(_) => assert!(expected < 2),
                }
            }
        }
    }

    #[test]
    fn speed_up_rejects_bad_k_and_short_input() {
        let m = line(9, 0.01);
        assert!(speed_up(&m, 0).is_err());
        assert!(speed_up(&m, 3).is_err());
        assert!(speed_up_bounded(&m, 3, 3).is_ok());
        assert!(matches!(speed_up(&line(2, 0.1), 1), Err(Error::Validation(_))));
    }

    #[test]
    fn slow_down_interpolates_and_keeps_endpoints() {
        let m = line(5, 0.06);
        for mf in 1..=2 {
            let slow = slow_down(&m, mf).unwrap();
            assert_eq!(slow.frames(), 5 + 4 * mf);
            for t in 0..5 {
                assert_eq!(slow.frame(t * (mf + 1)), m.frame(t));
            }
            for d in joint_diffs(&slow) {
                assert!((d - 0.06 / (mf + 1) as f64).abs() < 1e-12);
            }
        }
        assert!(slow_down(&m, 0).is_err());
        assert!(slow_down(&m, 3).is_err());
    }

    #[test]
    fn static_motion_stays_static() {
        let m = MotionSequence::static_pose(20, &T_POSE, 7, None).unwrap();
        for k in 1..=2 {
            assert!(joint_diffs(&speed_up(&m, k).unwrap()).iter().all(|&d| d == 0.0));
            assert!(joint_diffs(&slow_down(&m, k).unwrap()).iter().all(|&d| d == 0.0));
        }
    }
}
