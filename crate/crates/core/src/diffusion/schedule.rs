use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 0.00085,
            beta_end: 0.012,
        }
    }
}

/// Scaled-linear noise schedule: `β_i` is linear in `√β` between the
/// endpoints, `ᾱ_t = Π_{i≤t} (1 − β_i)`, `α_t = √ᾱ_t`, `σ_t = √(1 − ᾱ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alphas_cumprod: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        } = config;
        if steps < 2 || !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidParameter(format!("invalid schedule {config:?}")));
        }
        let (s0, s1) = (beta_start.sqrt(), beta_end.sqrt());
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                let s = s0 + (s1 - s0) * i as f64 / (steps - 1) as f64;
                s * s
            })
            .collect();
        let mut acc = 1.0;
        let alphas_cumprod = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self {
            config,
            betas,
            alphas_cumprod,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_cumprod[t]
    }

    /// `(α_t, σ_t)`.
    pub fn alpha_sigma(&self, t: usize) -> (f64, f64) {
        coefficients(self.alphas_cumprod[t])
    }

    /// `steps` timesteps with uniform stride, descending from the last
    /// training step: `T−1, T−1−s, …`.
    pub fn ddim_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let n = self.steps();
        if steps == 0 || steps > n {
            return Err(Error::InvalidParameter(format!("DDIM steps {steps} outside 1..={n}")));
        }
        let stride = n as f64 / steps as f64;
        Ok((0..steps)
            .map(|i| (n as f64 - i as f64 * stride).round() as usize - 1)
            .collect())
    }
}

#[inline]
pub(crate) fn coefficients(alpha_bar: f64) -> (f64, f64) {
    (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt())
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `z_t = α_t x + σ_t ε`.
pub fn add_noise(x: &Tensor, eps: &Tensor, t: usize, s: &DiffusionSchedule) -> Result<Tensor> {
    check_same(x, eps)?;
    let (a, sg) = s.alpha_sigma(t);
    Ok(x.zip_map(eps, |x, e| a * x + sg * e))
}

/// Velocity target `v_t = α_t ε − σ_t x`.
pub fn target_velocity(x: &Tensor, eps: &Tensor, t: usize, s: &DiffusionSchedule) -> Result<Tensor> {
    check_same(x, eps)?;
    let (a, sg) = s.alpha_sigma(t);
    Ok(velocity_with(x, eps, a, sg))
}

pub(crate) fn velocity_with(x: &Tensor, eps: &Tensor, alpha: f64, sigma: f64) -> Tensor {
    x.zip_map(eps, |x, e| alpha * e - sigma * x)
}

/// Clean-sample estimate `x̂ = α_t z − σ_t v`.
pub fn predict_x0(z: &Tensor, v: &Tensor, alpha: f64, sigma: f64) -> Tensor {
    z.zip_map(v, |z, v| alpha * z - sigma * v)
}

/// Noise estimate `ε̂ = σ_t z + α_t v`.
pub fn predict_eps(z: &Tensor, v: &Tensor, alpha: f64, sigma: f64) -> Tensor {
    z.zip_map(v, |z, v| sigma * z + alpha * v)
}

/// Mean squared error over all elements.
pub fn denoiser_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_same(pred, target)?;
    if pred.is_empty() {
        return Err(Error::Shape("loss over an empty tensor".into()));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}
