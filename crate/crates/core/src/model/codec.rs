//! Deterministic invertible latent codec standing in for a learned motion
//! autoencoder, plus the latent normalisation used by diffusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{GroupMap, MotionSequence, DEFAULT_FPS};
use crate::nn::Tensor;

const BASIS_SEED: u64 = 0xC0DEC;

/// Maps each region's zero-padded joint coordinates through a fixed matrix
/// with orthonormal columns, `z = B c`, and decodes with `c = Bᵀ z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodec {
    groups: GroupMap,
    dim: usize,
    width: usize,
    /// `[dim × width]`, orthonormal columns.
    basis: Vec<f64>,
}

impl LatentCodec {
    pub fn new(groups: GroupMap, dim: usize) -> Result<Self> {
        let width = 3 * groups.max_width();
        if dim < width {
            return Err(Error::InvalidParameter(format!(
                "latent dim {dim} is below 3 × widest region ({width}); the codec would not be injective"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(BASIS_SEED);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(width);
        while cols.len() < width {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Two Gram-Schmidt passes keep the columns orthonormal to ~1e-16.
            for _ in 0..2 {
                for c in &cols {
                    let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                    for (a, b) in v.iter_mut().zip(c) {
                        *a -= p * b;
                    }
                }
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-3 {
                cols.push(v.into_iter().map(|a| a / n).collect());
            }
        }
        let mut basis = vec![0.0; dim * width];
        for (k, c) in cols.iter().enumerate() {
            for d in 0..dim {
                basis[d * width + k] = c[d];
            }
        }
        Ok(Self {
            groups,
            dim,
            width,
            basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &GroupMap {
        &self.groups
    }

    /// `[T, N_g, D]` latents of one motion.
    pub fn encode(&self, m: &MotionSequence) -> Result<Tensor> {
        self.groups.check_motion(m)?;
        let (frames, ng) = (m.frames(), self.groups.len());
        let mut out = Tensor::zeros(&[frames, ng, self.dim]);
        let mut coords = vec![0.0; self.width];
        for t in 0..frames {
            for (g, group) in self.groups.groups().iter().enumerate() {
                coords.fill(0.0);
                for (i, &j) in group.joints.iter().enumerate() {
                    coords[3 * i..3 * i + 3].copy_from_slice(&m.position(t, j));
                }
                let row = out.row_mut(t * ng + g);
                for (d, z) in row.iter_mut().enumerate() {
                    let b = &self.basis[d * self.width..(d + 1) * self.width];
                    *z = b.iter().zip(&coords).map(|(x, y)| x * y).sum();
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode) on its image; for other inputs,
    /// the decode of the orthogonal projection onto it.
    pub fn decode(&self, z: &Tensor, label: Option<String>) -> Result<MotionSequence> {
        let ng = self.groups.len();
        let frames = match z.shape() {
            [t, g, d] if *g == ng && *d == self.dim => *t,
            s => {
                return Err(Error::Shape(format!(
                    "latents {s:?} do not match [T, {ng}, {}]",
                    self.dim
                )))
            }
        };
        let nj = self.groups.n_joints();
        let mut positions = vec![[0.0; 3]; frames * nj];
        for t in 0..frames {
            for (g, group) in self.groups.groups().iter().enumerate() {
                let row = z.row(t * ng + g);
                for (i, &j) in group.joints.iter().enumerate() {
                    let p = &mut positions[t * nj + j];
                    for (c, out) in p.iter_mut().enumerate() {
                        let k = 3 * i + c;
                        *out = (0..self.dim).map(|d| self.basis[d * self.width + k] * row[d]).sum();
                    }
                }
            }
        }
        MotionSequence::new(DEFAULT_FPS, nj, positions, label)
    }
}

/// Affine latent normalisation `(z − mean) / scale` with a per-(region,
/// channel) mean and one global scale, so geometry is preserved up to a
/// uniform factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNorm {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub regions: usize,
    pub dim: usize,
}

impl LatentNorm {
    pub fn identity(regions: usize, dim: usize) -> Self {
        Self {
            mean: vec![0.0; regions * dim],
            scale: 1.0,
            regions,
            dim,
        }
    }

    /// Fits mean and scale over every frame of every sample.
    pub fn fit(samples: &[Tensor]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Validation("no latents to fit".into()))?;
        let (regions, dim) = match first.shape() {
            [_, g, d] => (*g, *d),
            s => return Err(Error::Shape(format!("latents must be [T, N_g, D], got {s:?}"))),
        };
        let width = regions * dim;
        let mut mean = vec![0.0; width];
        let mut count = 0usize;
        for s in samples {
            if s.shape()[1..] != [regions, dim] {
                return Err(Error::Shape("latent samples differ in region or channel count".into()));
            }
            for frame in s.data().chunks(width) {
                for (m, v) in mean.iter_mut().zip(frame) {
                    *m += v;
                }
                count += 1;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut sq = 0.0;
        for s in samples {
            for frame in s.data().chunks(width) {
                sq += frame.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
            }
        }
        let scale = (sq / (count * width) as f64).sqrt();
        Ok(Self {
            mean,
            scale: if scale > 1e-12 { scale } else { 1.0 },
            regions,
            dim,
        })
    }

    pub fn normalize(&self, z: &Tensor) -> Tensor {
        self.apply(z, |v, m| (v - m) / self.scale)
    }

    pub fn denormalize(&self, z: &Tensor) -> Tensor {
        self.apply(z, |v, m| v * self.scale + m)
    }

    fn apply(&self, z: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let mut out = z.clone();
        for frame in out.data_mut().chunks_mut(self.regions * self.dim) {
            for (v, m) in frame.iter_mut().zip(&self.mean) {
                *v = f(*v, *m);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{default_group_map, synth_motion, T_POSE};

    #[test]
    fn round_trip_is_exact() {
        let codec = LatentCodec::new(default_group_map(), 32).unwrap();
        for seed in 0..5 {
            let m = synth_motion(seed as usize, 0.2, 1.0, 12, seed).unwrap();
            let back = codec.decode(&codec.encode(&m).unwrap(), None).unwrap();
            for (a, b) in m.positions().iter().zip(back.positions()) {
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn static_motion_gives_constant_latents() {
        let codec = LatentCodec::new(default_group_map(), 16).unwrap();
        let z = codec
            .encode(&MotionSequence::static_pose(20, &T_POSE, 4, None).unwrap())
            .unwrap();
        let frame = 7 * 16;
        for t in 1..4 {
            assert_eq!(z.data()[t * frame..(t + 1) * frame], z.data()[..frame]);
        }
    }

    #[test]
    fn single_coordinate_change_touches_one_region() {
        let codec = LatentCodec::new(default_group_map(), 32).unwrap();
        let m = synth_motion(11, 0.1, 1.0, 6, 1).unwrap();
        let mut p = m.positions().to_vec();
        p[3 * 22 + 18][1] += 0.05; // joint 18 sits in left_upper (region 4)
        let m2 = MotionSequence::new(20, 22, p, None).unwrap();
        let (a, b) = (codec.encode(&m).unwrap(), codec.encode(&m2).unwrap());
        for t in 0..6 {
            for g in 0..7 {
                let differs = a.row(t * 7 + g) != b.row(t * 7 + g);
                assert_eq!(differs, t == 3 && g == 4, "t {t} g {g}");
            }
        }
    }

    #[test]
    fn decode_zero_is_origin_and_projection_is_idempotent() {
        let codec = LatentCodec::new(default_group_map(), 16).unwrap();
        let m = codec.decode(&Tensor::zeros(&[3, 7, 16]), None).unwrap();
        assert!(m.positions().iter().all(|p| *p == [0.0; 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Tensor::from_vec(
            &[3, 7, 16],
            (0..3 * 7 * 16).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let once = codec.decode(&z, None).unwrap();
        let twice = codec.decode(&codec.encode(&once).unwrap(), None).unwrap();
        for (a, b) in once.positions().iter().zip(twice.positions()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_narrow_latents() {
        assert!(LatentCodec::new(default_group_map(), 11).is_err());
        assert!(LatentCodec::new(default_group_map(), 12).is_ok());
    }

    #[test]
    fn norm_round_trip_and_statistics() {
        let codec = LatentCodec::new(default_group_map(), 16).unwrap();
        let samples: Vec<Tensor> = (0..4)
            .map(|s| {
                codec
                    .encode(&synth_motion(2, 0.1 + 0.05 * s as f64, 1.0, 10, s).unwrap())
                    .unwrap()
            })
            .collect();
        let norm = LatentNorm::fit(&samples).unwrap();
        let n = norm.normalize(&samples[0]);
        assert!(norm.denormalize(&n).max_abs_diff(&samples[0]) < 1e-12);
        let all: Vec<f64> = samples.iter().flat_map(|s| norm.normalize(s).into_data()).collect();
        let rms = (all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-9);
    }
}
