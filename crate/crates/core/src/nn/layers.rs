//! Parameterized layers with explicit forward caches and backward passes.
//! Every layer works on `[rows × features]` tensors.

use rand::Rng;

use super::params::{fan_in_uniform, Gradients, ParamId, ParamStore};
use super::tensor::{dot, gemm, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    FanIn,
    Zero,
    /// Square weight set to the identity, bias zero.
    Identity,
}

/// Affine map along the last axis, `y = x Wᵀ + b` with `W: [out × in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let (w, b) = match init {
            Init::FanIn => (
                fan_in_uniform(&[out_dim, in_dim], in_dim, rng),
                fan_in_uniform(&[out_dim], in_dim, rng),
            ),
            Init::Zero => (Tensor::zeros(&[out_dim, in_dim]), Tensor::zeros(&[out_dim])),
            Init::Identity => {
                assert_eq!(in_dim, out_dim, "identity init needs a square layer");
                (Tensor::identity(in_dim), Tensor::zeros(&[out_dim]))
            }
        };
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        linear(x, store.value(self.weight), store.value(self.bias))
    }

    /// Accumulates weight and bias gradients; returns `dL/dx`.
    pub fn backward(&self, store: &ParamStore, x: &Tensor, dy: &Tensor, grads: &mut Gradients) -> Tensor {
        let w = store.value(self.weight);
        let (n, i, o) = (x.rows(), self.in_dim, self.out_dim);
        // dW += dYᵀ X
        gemm(
            o,
            n,
            i,
            (dy.data(), 1, o),
            (x.data(), i, 1),
            1.0,
            grads.get_mut(self.weight).data_mut(),
        );
        {
            let db = grads.get_mut(self.bias).data_mut();
            for r in 0..n {
                for (b, g) in db.iter_mut().zip(dy.row(r)) {
                    *b += g;
                }
            }
        }
        let mut dx = Tensor::zeros(&[n, i]);
        gemm(n, o, i, (dy.data(), o, 1), (w.data(), i, 1), 0.0, dx.data_mut());
        dx
    }
}

/// `x Wᵀ + b` along the last axis of `x`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (out_dim, in_dim) = match w.shape() {
        [o, i] => (*o, *i),
        s => return Err(Error::Shape(format!("weight must be 2-D, got {s:?}"))),
    };
    if x.cols() != in_dim || b.len() != out_dim {
        return Err(Error::Shape(format!(
            "linear: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("input has an axis") = out_dim;
    let mut y = Tensor::zeros(&shape);
    for row in y.data_mut().chunks_mut(out_dim) {
        row.copy_from_slice(b.data());
    }
    gemm(
        x.rows(),
        in_dim,
        out_dim,
        (x.data(), in_dim, 1),
        (w.data(), 1, in_dim),
        1.0,
        y.data_mut(),
    );
    y.debug_check_finite("linear");
    Ok(y)
}

/// Softmax along `axis`, shifted by the maximum for stability.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut y = x.clone();
    let data = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..n {
                let e = (data[idx(k)] - max).exp();
                data[idx(k)] = e;
                sum += e;
            }
            for k in 0..n {
                data[idx(k)] /= sum;
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(&[dim], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
            dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        layer_norm_cached(x, store.value(self.gamma), store.value(self.beta))
    }

    pub fn backward(&self, store: &ParamStore, cache: &LayerNormCache, dy: &Tensor, grads: &mut Gradients) -> Tensor {
        let gamma = store.value(self.gamma).data();
        let d = self.dim;
        let mut dx = Tensor::zeros(dy.shape());
        let mut dxhat = vec![0.0; d];
        for i in 0..dy.rows() {
            let dyi = dy.row(i);
            let xh = cache.xhat.row(i);
            {
                let dg = grads.get_mut(self.gamma).data_mut();
                for k in 0..d {
                    dg[k] += dyi[k] * xh[k];
                }
            }
            {
                let dbeta = grads.get_mut(self.beta).data_mut();
                for k in 0..d {
                    dbeta[k] += dyi[k];
                }
            }
            for k in 0..d {
                dxhat[k] = dyi[k] * gamma[k];
            }
            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_xhat = dot(&dxhat, xh) / d as f64;
            let s = cache.inv_std[i];
            for (k, out) in dx.row_mut(i).iter_mut().enumerate() {
                *out = s * (dxhat[k] - mean_dxhat - xh[k] * mean_dxhat_xhat);
            }
        }
        dx
    }
}

/// Per-row standardisation followed by the `gamma`/`beta` affine map.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    layer_norm_cached(x, gamma, beta).map(|(y, _)| y)
}

fn layer_norm_cached(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Shape(format!(
            "layer norm over {d} features with gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let (g, b) = (gamma.data(), beta.data());
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let xi = x.row(i);
        let mean = xi.iter().sum::<f64>() / d as f64;
        let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(s);
        let xh = xhat.row_mut(i);
        for k in 0..d {
            xh[k] = (xi[k] - mean) * s;
        }
        let xh = xhat.row(i).to_vec();
        for (k, out) in y.row_mut(i).iter_mut().enumerate() {
            *out = g[k] * xh[k] + b[k];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

/// `Linear(D → wD) → GELU → Linear(wD → D)`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        out_init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, Init::FanIn, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, out_init, rng),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, FeedForwardCache)> {
        let pre = self.up.forward(store, x)?;
        let act = pre.map(gelu);
        let y = self.down.forward(store, &act)?;
        Ok((y, FeedForwardCache { x: x.clone(), pre, act }))
    }

    pub fn backward(&self, store: &ParamStore, cache: &FeedForwardCache, dy: &Tensor, grads: &mut Gradients) -> Tensor {
        let dact = self.down.backward(store, &cache.act, dy, grads);
        let dpre = dact.zip_map(&cache.pre, |g, x| g * gelu_grad(x));
        self.up.backward(store, &cache.x, &dpre, grads)
    }
}

/// Channelwise modulation by a conditioning vector:
/// `y = x · (1 + scale(c)) + shift(c)`.
#[derive(Debug, Clone)]
pub struct Film {
    pub scale: Linear,
    pub shift: Linear,
}

#[derive(Debug, Clone)]
pub struct FilmCache {
    x: Tensor,
    cond: Tensor,
    scale: Vec<f64>,
}

impl Film {
    /// Zero-initialised projections make the layer start as the identity.
    pub fn new(store: &mut ParamStore, name: &str, cond_dim: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            scale: Linear::new(store, &format!("{name}.scale"), cond_dim, dim, Init::Zero, rng),
            shift: Linear::new(store, &format!("{name}.shift"), cond_dim, dim, Init::Zero, rng),
        }
    }

    /// `cond` is a single `[cond_dim]` vector shared by every row of `x`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor, cond: &Tensor) -> Result<(Tensor, FilmCache)> {
        let cond = cond.clone().reshaped(&[1, cond.len()])?;
        let scale = self.scale.forward(store, &cond)?.into_data();
        let shift = self.shift.forward(store, &cond)?.into_data();
        if x.cols() != scale.len() {
            return Err(Error::Shape(format!(
                "FiLM over {} channels applied to {:?}",
                scale.len(),
                x.shape()
            )));
        }
        let mut y = Tensor::zeros(x.shape());
        for i in 0..x.rows() {
            let xi = x.row(i);
            for (k, out) in y.row_mut(i).iter_mut().enumerate() {
                *out = xi[k] * (1.0 + scale[k]) + shift[k];
            }
        }
        Ok((
            y,
            FilmCache {
                x: x.clone(),
                cond,
                scale,
            },
        ))
    }

    /// Returns `(dL/dx, dL/dcond)`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &FilmCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> (Tensor, Tensor) {
        let d = cache.scale.len();
        let mut dx = Tensor::zeros(dy.shape());
        let mut dscale = Tensor::zeros(&[1, d]);
        let mut dshift = Tensor::zeros(&[1, d]);
        for i in 0..dy.rows() {
            let (dyi, xi) = (dy.row(i), cache.x.row(i));
            let dxi = dx.row_mut(i);
            let (ds, dh) = (dscale.data_mut(), dshift.data_mut());
            for k in 0..d {
                dxi[k] = dyi[k] * (1.0 + cache.scale[k]);
                ds[k] += dyi[k] * xi[k];
                dh[k] += dyi[k];
            }
        }
        let mut dcond = self.scale.backward(store, &cache.cond, &dscale, grads);
        dcond.add_assign(&self.shift.backward(store, &cache.cond, &dshift, grads));
        let n = dcond.len();
        (dx, dcond.reshaped(&[n]).expect("same length"))
    }
}

/// Sinusoidal encoding of a scalar position with geometric frequencies,
/// `[sin(p·f_0) … sin(p·f_{h−1}), cos(p·f_0) … cos(p·f_{h−1})]`.
pub fn sinusoidal_embedding(position: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (position * freq).sin();
        out[half + k] = (position * freq).cos();
    }
    out
}

/// Diffusion timestep encoder: sinusoidal features followed by a two-layer
/// GELU network.
#[derive(Debug, Clone)]
pub struct TimestepEmbedder {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct TimestepCache {
    feats: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl TimestepEmbedder {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, dim, Init::FanIn, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), dim, dim, Init::FanIn, rng),
            dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, t: f64) -> Result<(Tensor, TimestepCache)> {
        let feats = Tensor::from_vec(&[1, self.dim], sinusoidal_embedding(t, self.dim))?;
        let pre = self.fc1.forward(store, &feats)?;
        let act = pre.map(gelu);
        let out = self.fc2.forward(store, &act)?;
        let out = out.reshaped(&[self.dim])?;
        Ok((out, TimestepCache { feats, pre, act }))
    }

    pub fn backward(&self, store: &ParamStore, cache: &TimestepCache, dy: &Tensor, grads: &mut Gradients) {
        let dy = dy.clone().reshaped(&[1, self.dim]).expect("embedding width");
        let dact = self.fc2.backward(store, &cache.act, &dy, grads);
        let dpre = dact.zip_map(&cache.pre, |g, x| g * gelu_grad(x));
        self.fc1.backward(store, &cache.feats, &dpre, grads);
    }
}

/// Inverted dropout: kept entries are scaled by `1/(1−rate)` so the
/// expectation matches evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
        Self { rate }
    }

    /// Multiplicative mask of length `n`; all ones at rate 0.
    pub fn mask(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        if self.rate == 0.0 {
            return vec![1.0; n];
        }
        let keep = 1.0 / (1.0 - self.rate);
        (0..n)
            .map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect()
    }

    pub fn apply(&self, x: &Tensor, rng: &mut impl Rng) -> Tensor {
        let mask = self.mask(x.len(), rng);
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let mut r = rng();
        let x = random(&[3, 4], &mut r);
        let y = linear(&x, &Tensor::identity(4), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(y, x);
        let b = random(&[5], &mut r);
        let y = linear(&Tensor::zeros(&[2, 4]), &random(&[5, 4], &mut r), &b).unwrap();
        for i in 0..2 {
            assert_eq!(y.row(i), b.data());
        }
        assert!(linear(&x, &random(&[5, 3], &mut r), &b).is_err());
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut r = rng();
        let x = random(&[3, 4], &mut r);
        let w = random(&[5, 4], &mut r);
        let b = random(&[5], &mut r);
        let y = linear(&x, &w, &b).unwrap();
        for i in 0..3 {
            for o in 0..5 {
                let mut acc = b.data()[o];
                for k in 0..4 {
                    acc += x.data()[i * 4 + k] * w.data()[o * 4 + k];
                }
                assert!((y.data()[i * 5 + o] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let u = softmax(&Tensor::filled(&[4], 0.3), 0).unwrap();
        assert!(u.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let s = softmax(&Tensor::from_vec(&[2], vec![0.0, 3f64.ln()]).unwrap(), 0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12 && (s.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalised() {
        let mut r = rng();
        let x = random(&[3, 5, 2], &mut r);
        for axis in 0..3 {
            let a = softmax(&x, axis).unwrap();
            let b = softmax(&x.map(|v| v + 1000.0), axis).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-12);
        }
        let p = softmax(&x, 1).unwrap();
        for o in 0..3 {
            for i in 0..2 {
                let s: f64 = (0..5).map(|k| p.data()[(o * 5 + k) * 2 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert!(softmax(&x, 3).is_err());
    }

    #[test]
    fn layer_norm_statistics() {
        let mut r = rng();
        let c = layer_norm(
            &Tensor::filled(&[2, 6], 3.5),
            &Tensor::filled(&[6], 1.0),
            &Tensor::zeros(&[6]),
        )
        .unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
        let x = random(&[20, 16], &mut r).map(|v| 4.0 * v + 2.0);
        let y = layer_norm(&x, &Tensor::filled(&[16], 1.0), &Tensor::zeros(&[16])).unwrap();
        for i in 0..20 {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() <= 1e-10);
            assert!((var - 1.0).abs() <= 1e-5, "var {var}");
        }
        let y = layer_norm(&x, &Tensor::zeros(&[16]), &Tensor::filled(&[16], 5.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn film_identity_at_init_and_zeroing() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let film = Film::new(&mut store, "film", 3, 4, &mut r);
        let x = random(&[5, 4], &mut r);
        let c = random(&[3], &mut r);
        assert_eq!(film.forward(&store, &x, &c).unwrap().0, x);
        // Bias of the scale branch at −1 and zero shift silences the input.
        store.value_mut(film.scale.bias).fill(-1.0);
        let (y, _) = film.forward(&store, &x, &c).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_rate_zero_is_identity_and_expectation_preserved() {
        let mut r = rng();
        let x = random(&[8], &mut r);
        assert_eq!(Dropout::new(0.0).apply(&x, &mut r), x);
        let d = Dropout::new(0.1);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| d.mask(1, &mut r)[0]).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean mask {mean}");
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn sinusoidal_embedding_at_zero() {
        let e = sinusoidal_embedding(0.0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
