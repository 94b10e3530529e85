//! Motion data model: joint trajectories, anatomical region grouping, the
//! prompt vocabulary, JSON file I/O and the synthetic sinusoidal corpus.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint count of the HumanML3D skeleton.
pub const N_JOINTS: usize = 22;
pub const DEFAULT_FPS: u32 = 20;

/// A positional joint trajectory of `frames × joints × 3` coordinates in
/// meters, stored row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: u32,
    n_joints: usize,
    positions: Vec<[f64; 3]>,
    label: Option<String>,
}

impl MotionSequence {
    pub fn new(fps: u32, n_joints: usize, positions: Vec<[f64; 3]>, label: Option<String>) -> Result<Self> {
        if fps == 0 {
            return Err(Error::Validation("fps must be positive".into()));
        }
        if n_joints == 0 {
            return Err(Error::Validation("motion has no joints".into()));
        }
        if !positions.len().is_multiple_of(n_joints) {
            return Err(Error::Validation(format!(
                "{} positions are not a whole number of {n_joints}-joint frames",
                positions.len()
            )));
        }
        let frames = positions.len() / n_joints;
        if frames < 2 {
            return Err(Error::Validation(format!(
                "motion needs at least 2 frames, got {frames}"
            )));
        }
        if let Some(idx) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Validation(format!(
                "non-finite coordinate at frame {}, joint {}",
                idx / n_joints,
                idx % n_joints
            )));
        }
        Ok(Self {
            fps,
            n_joints,
            positions,
            label,
        })
    }

    /// Builds a sequence from nested `[frame][joint]` rows.
    pub fn from_frames(fps: u32, frames: Vec<Vec<[f64; 3]>>, label: Option<String>) -> Result<Self> {
        let n_joints = frames.first().map(Vec::len).unwrap_or(0);
        if let Some(t) = frames.iter().position(|f| f.len() != n_joints) {
            return Err(Error::Validation(format!(
                "frame {t} has {} joints, expected {n_joints}",
                frames[t].len()
            )));
        }
        Self::new(fps, n_joints, frames.into_iter().flatten().collect(), label)
    }

    pub fn static_pose(fps: u32, pose: &[[f64; 3]], frames: usize, label: Option<String>) -> Result<Self> {
        let positions = (0..frames).flat_map(|_| pose.iter().copied()).collect();
        Self::new(fps, pose.len(), positions, label)
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frames(&self) -> usize {
        self.positions.len() / self.n_joints
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    #[inline]
    pub fn position(&self, frame: usize, joint: usize) -> [f64; 3] {
        self.positions[frame * self.n_joints + joint]
    }

    pub fn frame(&self, frame: usize) -> &[[f64; 3]] {
        &self.positions[frame * self.n_joints..(frame + 1) * self.n_joints]
    }

    pub fn with_label(mut self, label: Option<String>) -> Self {
        self.label = label;
        self
    }

    /// Applies `f` to every coordinate triple, revalidating the result.
    pub fn map_positions(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        Self::new(
            self.fps,
            self.n_joints,
            self.positions.iter().map(|&p| f(p)).collect(),
            self.label.clone(),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct MotionFile {
    fps: u32,
    n_joints: usize,
    #[serde(deserialize_with = "deserialize_frames")]
    frames: Vec<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// A coordinate as written by common exporters: a number, or `null` /
/// `"NaN"` / `"Infinity"` for non-finite values, which validation rejects.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawCoord {
    Number(f64),
    Text(String),
    Null(()),
}

impl RawCoord {
    fn value(self) -> std::result::Result<f64, String> {
        match self {
            RawCoord::Number(v) => Ok(v),
            RawCoord::Null(()) => Ok(f64::NAN),
            RawCoord::Text(s) => match s.as_str() {
                "NaN" | "nan" => Ok(f64::NAN),
                "Infinity" | "inf" => Ok(f64::INFINITY),
                "-Infinity" | "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(format!("coordinate {s:?} is not a number")),
            },
        }
    }
}

fn deserialize_frames<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<[f64; 3]>>, D::Error> {
    let raw: Vec<Vec<[RawCoord; 3]>> = Vec::deserialize(d)?;
    raw.into_iter()
        .map(|frame| {
            frame
                .into_iter()
                .map(|[x, y, z]| Ok([x.value()?, y.value()?, z.value()?]))
                .collect::<std::result::Result<Vec<_>, String>>()
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(serde::de::Error::custom)
}

pub fn motion_to_json(m: &MotionSequence) -> String {
    let file = MotionFile {
        fps: m.fps,
        n_joints: m.n_joints,
        frames: m.positions.chunks(m.n_joints).map(<[_]>::to_vec).collect(),
        label: m.label.clone(),
    };
    serde_json::to_string(&file).expect("finite motion always serializes")
}

pub fn motion_from_json(text: &str) -> Result<MotionSequence> {
    let file: MotionFile = serde_json::from_str(text).map_err(|e| Error::parse("motion JSON", e))?;
    if let Some(t) = file.frames.iter().position(|f| f.len() != file.n_joints) {
        return Err(Error::Validation(format!(
            "frame {t} has {} joints but n_joints is {}",
            file.frames[t].len(),
            file.n_joints
        )));
    }
    MotionSequence::new(
        file.fps,
        file.n_joints,
        file.frames.into_iter().flatten().collect(),
        file.label,
    )
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    motion_from_json(&text)
}

pub fn save_motion(m: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, motion_to_json(m)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub joints: Vec<usize>,
}

/// Ordered assignment of joints to disjoint anatomical regions. The region
/// index is the position in `groups` and is meaningful downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupMap {
    groups: Vec<Group>,
    #[serde(skip)]
    n_joints: usize,
}

impl GroupMap {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Validation("group map has no groups".into()));
        }
        let mut seen = BTreeSet::new();
        let mut names = BTreeSet::new();
        for g in &groups {
            if g.joints.is_empty() {
                return Err(Error::Validation(format!("group {:?} is empty", g.name)));
            }
            if !names.insert(g.name.as_str()) {
                return Err(Error::Validation(format!("duplicate group name {:?}", g.name)));
            }
            for &j in &g.joints {
                if !seen.insert(j) {
                    return Err(Error::Validation(format!("joint {j} assigned twice")));
                }
            }
        }
        let n_joints = seen.len();
        if seen.iter().copied().ne(0..n_joints) {
            return Err(Error::Validation(format!(
                "groups must cover joints 0..{n_joints} without gaps"
            )));
        }
        Ok(Self { groups, n_joints })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.n_joints
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|g| g.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    /// Largest joint count of any region.
    pub fn max_width(&self) -> usize {
        self.groups.iter().map(|g| g.joints.len()).max().unwrap_or(0)
    }

    /// Region index for each joint.
    pub fn region_of_joints(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_joints];
        for (g, group) in self.groups.iter().enumerate() {
            for &j in &group.joints {
                out[j] = g;
            }
        }
        out
    }

    /// Reorders regions so that new region `i` is old region `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::Shape(format!(
                "permutation of length {} for {} groups",
                perm.len(),
                self.len()
            )));
        }
        Self::new(perm.iter().map(|&p| self.groups[p].clone()).collect())
    }

    pub fn check_motion(&self, m: &MotionSequence) -> Result<()> {
        if m.n_joints() != self.n_joints {
            return Err(Error::Validation(format!(
                "motion has {} joints, group map covers {}",
                m.n_joints(),
                self.n_joints
            )));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct GroupMapFile {
    groups: Vec<Group>,
}

impl<'de> Deserialize<'de> for GroupMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = GroupMapFile::deserialize(d)?;
        GroupMap::new(file.groups).map_err(serde::de::Error::custom)
    }
}

pub fn load_group_map(path: impl AsRef<Path>) -> Result<GroupMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse("group map JSON", e))
}

pub fn save_group_map(g: &GroupMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(g).expect("group map serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const REGION_NAMES: [&str; 7] = [
    "root",
    "left_lower",
    "right_lower",
    "spine",
    "left_upper",
    "right_upper",
    "head",
];

/// The seven-region map over the 22-joint skeleton.
pub fn default_group_map() -> GroupMap {
    let joints: [&[usize]; 7] = [
        &[0],
        &[1, 4, 7, 10],
        &[2, 5, 8, 11],
        &[3, 6, 9],
        &[13, 16, 18, 20],
        &[14, 17, 19, 21],
        &[12, 15],
    ];
    let groups = REGION_NAMES
        .iter()
        .zip(joints)
        .map(|(name, joints)| Group {
            name: (*name).to_string(),
            joints: joints.to_vec(),
        })
        .collect();
    GroupMap::new(groups).expect("default group map is valid")
}

/// Ordered set of action prompts with dense integer ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVocabulary {
    entries: Vec<String>,
}

impl PromptVocabulary {
    pub fn new(entries: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.as_str()) {
                return Err(Error::Validation(format!("duplicate prompt {e:?}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn get(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn id_of(&self, prompt: &str) -> Result<usize> {
        self.entries
            .iter()
            .position(|e| e == prompt)
            .ok_or_else(|| Error::UnknownPrompt {
                prompt: prompt.to_string(),
                known: self.entries.join(", "),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionCategory {
    LowerBody,
    UpperBody,
    FullBody,
}

/// One action of the default vocabulary and the regions the synthetic
/// generator animates for it.
#[derive(Debug, Clone, Copy)]
pub struct ActionProfile {
    pub prompt: &'static str,
    pub category: ActionCategory,
    pub active_regions: &'static [usize],
}

// Region indices follow REGION_NAMES.
pub const ACTIONS: [ActionProfile; 14] = [
    ActionProfile {
        prompt: "a man lunges",
        category: ActionCategory::LowerBody,
        active_regions: &[0, 1, 2],
    },
    ActionProfile {
        prompt: "a man walks",
        category: ActionCategory::LowerBody,
        active_regions: &[0, 1, 2],
    },
    ActionProfile {
        prompt: "a man runs",
        category: ActionCategory::LowerBody,
        active_regions: &[0, 1, 2],
    },
    ActionProfile {
        prompt: "a man kicks",
        category: ActionCategory::LowerBody,
        active_regions: &[2],
    },
    ActionProfile {
        prompt: "a man waves",
        category: ActionCategory::UpperBody,
        active_regions: &[5],
    },
    ActionProfile {
        prompt: "a man waves an arm",
        category: ActionCategory::UpperBody,
        active_regions: &[4],
    },
    ActionProfile {
        prompt: "a man punches",
        category: ActionCategory::UpperBody,
        active_regions: &[4, 5],
    },
    ActionProfile {
        prompt: "a man throws a ball",
        category: ActionCategory::UpperBody,
        active_regions: &[5],
    },
    ActionProfile {
        prompt: "a man swings his arms",
        category: ActionCategory::UpperBody,
        active_regions: &[4, 5],
    },
    ActionProfile {
        prompt: "a man shakes his arms",
        category: ActionCategory::UpperBody,
        active_regions: &[4, 5],
    },
    ActionProfile {
        prompt: "a man squats",
        category: ActionCategory::FullBody,
        active_regions: &[0, 1, 2, 3],
    },
    ActionProfile {
        prompt: "a man dances",
        category: ActionCategory::FullBody,
        active_regions: &[0, 1, 2, 3, 4, 5, 6],
    },
    ActionProfile {
        prompt: "a man jumps",
        category: ActionCategory::FullBody,
        active_regions: &[0, 1, 2, 3],
    },
    ActionProfile {
        prompt: "a man bends over",
        category: ActionCategory::FullBody,
        active_regions: &[3, 4, 5, 6],
    },
];

/// The fourteen-action prompt set in three body categories.
pub fn default_vocabulary() -> PromptVocabulary {
    PromptVocabulary::new(ACTIONS.iter().map(|a| a.prompt.to_string()).collect()).expect("default vocabulary is unique")
}

/// Canonical T-pose of the 22-joint skeleton, y up, left = +x.
pub const T_POSE: [[f64; 3]; N_JOINTS] = [
    [0.0, 0.93, 0.0],
    [0.06, 0.84, 0.0],
    [-0.06, 0.84, 0.0],
    [0.0, 1.05, 0.0],
    [0.10, 0.47, 0.0],
    [-0.10, 0.47, 0.0],
    [0.0, 1.18, 0.0],
    [0.10, 0.07, 0.0],
    [-0.10, 0.07, 0.0],
    [0.0, 1.23, 0.0],
    [0.10, 0.02, 0.12],
    [-0.10, 0.02, 0.12],
    [0.0, 1.45, 0.0],
    [0.08, 1.37, 0.0],
    [-0.08, 1.37, 0.0],
    [0.0, 1.60, 0.0],
    [0.18, 1.40, 0.0],
    [-0.18, 1.40, 0.0],
    [0.45, 1.40, 0.0],
    [-0.45, 1.40, 0.0],
    [0.70, 1.40, 0.0],
    [-0.70, 1.40, 0.0],
];

/// Deterministic synthetic motion: every active region of the action
/// oscillates along a fixed direction around the T-pose,
/// `offset(t, j) = amplitude · w_j · sin(2π·frequency·t/fps + φ_g) · d_g`.
/// Direction `d_g` and per-joint weights `w_j` depend only on the action and
/// region; the phase `φ_g` comes from `seed`.
pub fn synth_motion(
    action_id: usize,
    amplitude: f64,
    frequency: f64,
    frames: usize,
    seed: u64,
) -> Result<MotionSequence> {
    let action = ACTIONS.get(action_id).ok_or_else(|| {
        Error::InvalidParameter(format!("action id {action_id} outside vocabulary of {}", ACTIONS.len()))
    })?;
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidParameter(format!("amplitude {amplitude} must be >= 0")));
    }
    if !(frequency > 0.0 && frequency.is_finite()) {
        return Err(Error::InvalidParameter(format!("frequency {frequency} must be > 0")));
    }
    if frames < 4 {
        return Err(Error::InvalidParameter(format!("need at least 4 frames, got {frames}")));
    }

    let groups = default_group_map();
    let mut shape_rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + action_id as u64);
    let mut phase_rng = ChaCha8Rng::seed_from_u64(seed ^ ((action_id as u64) << 32));

    // (joint, weight, direction, phase) for every animated joint.
    let mut drivers = Vec::new();
    for &g in action.active_regions {
        let dir = random_unit(&mut shape_rng);
        let phase = phase_rng.random_range(0.0..std::f64::consts::TAU);
        for &j in &groups.groups()[g].joints {
            let w = shape_rng.random_range(0.5..1.0);
            drivers.push((j, w, dir, phase));
        }
    }

    let fps = DEFAULT_FPS;
    let mut positions = Vec::with_capacity(frames * N_JOINTS);
    for t in 0..frames {
        let start = positions.len();
        positions.extend_from_slice(&T_POSE);
        let angle = std::f64::consts::TAU * frequency * t as f64 / fps as f64;
        for &(j, w, dir, phase) in &drivers {
            let s = amplitude * w * (angle + phase).sin();
            let p = &mut positions[start + j];
            for c in 0..3 {
                p[c] += s * dir[c];
            }
        }
    }
    MotionSequence::new(fps, N_JOINTS, positions, Some(action.prompt.to_string()))
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.2 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Parameters of one synthetic corpus item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub action_id: usize,
    pub amplitude: f64,
    pub frequency: f64,
    pub frames: usize,
    pub seed: u64,
}

/// Draws `per_action` items for each action with amplitudes spread over
/// `amplitude_range` and a fixed per-action frequency.
pub fn synth_corpus_specs(
    actions: &[usize],
    per_action: usize,
    amplitude_range: (f64, f64),
    frames: usize,
    seed: u64,
) -> Vec<SynthSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(actions.len() * per_action);
    for &action_id in actions {
        let frequency = 0.5 + 0.25 * (action_id % 4) as f64;
        for i in 0..per_action {
            // Stratified amplitudes so every corpus covers the whole range.
            let u = (i as f64 + rng.random_range(0.0..1.0)) / per_action as f64;
            let amplitude = amplitude_range.0 + u * (amplitude_range.1 - amplitude_range.0);
            out.push(SynthSpec {
                action_id,
                amplitude,
                frequency,
                frames,
                seed: rng.random(),
            });
        }
    }
    out
}

impl SynthSpec {
    pub fn generate(&self) -> Result<MotionSequence> {
        synth_motion(self.action_id, self.amplitude, self.frequency, self.frames, self.seed)
    }
}
