//! Scaled dot-product multi-head attention over explicit row groups.
//!
//! Queries and keys are rows of two `[n × D]` tensors. Each
//! [`AttentionGroup`] lists the query rows that attend to a set of key rows,
//! which expresses temporal attention (one group per region), skeletal
//! attention (one group per frame) and cross-attention (one group) with the
//! same kernel.

use rand::RngCore;

use super::layers::{Dropout, Init, Linear};
use super::params::{Gradients, ParamStore};
use std::ops::Range;

use super::tensor::{axpy, dot, gemm, order_invariant_sum, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionGroup {
    pub queries: Vec<usize>,
    pub keys: Vec<usize>,
}

impl AttentionGroup {
    /// Every query row attends to every key row.
    pub fn dense(n_queries: usize, n_keys: usize) -> Vec<AttentionGroup> {
        vec![AttentionGroup {
            queries: (0..n_queries).collect(),
            keys: (0..n_keys).collect(),
        }]
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Training-time options of one attention call.
#[derive(Default)]
pub struct AttentionOptions<'a> {
    /// Dropout on the attention weights with its randomness source.
    pub dropout: Option<(Dropout, &'a mut dyn RngCore)>,
    /// Reduce over keys with [`order_invariant_sum`].
    pub order_invariant: bool,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    xq: Tensor,
    xkv: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    concat: Tensor,
    groups: Vec<AttentionGroup>,
    /// Softmax weights per (group, head), `[queries × keys]` row-major.
    weights: Vec<Vec<f64>>,
    masks: Option<Vec<Vec<f64>>>,
}

impl AttentionCache {
    /// Attention weights of `(group, head)` as rows over keys.
    pub fn weights(&self, group: usize, head: usize, heads: usize) -> Vec<&[f64]> {
        let w = &self.weights[group * heads + head];
        let nk = self.groups[group].keys.len();
        w.chunks(nk).collect()
    }

    pub fn all_weight_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let heads = self.weights.len() / self.groups.len().max(1);
        self.weights.iter().enumerate().flat_map(move |(i, w)| {
            let nk = self.groups[i / heads].keys.len();
            w.chunks(nk)
        })
    }
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        out_init: Init,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Shape(format!("dim {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, Init::FanIn, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, Init::FanIn, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, Init::FanIn, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, out_init, rng),
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        xq: &Tensor,
        xkv: &Tensor,
        groups: &[AttentionGroup],
        opts: AttentionOptions<'_>,
    ) -> Result<(Tensor, AttentionCache)> {
        if xq.cols() != self.dim || xkv.cols() != self.dim {
            return Err(Error::Shape(format!(
                "attention of width {} got queries {:?} and keys {:?}",
                self.dim,
                xq.shape(),
                xkv.shape()
            )));
        }
        for g in groups {
            if g.keys.is_empty() || g.queries.iter().any(|&r| r >= xq.rows()) || g.keys.iter().any(|&r| r >= xkv.rows())
            {
                return Err(Error::Shape("attention group indexes outside its inputs".into()));
            }
        }
        let q = self.q.forward(store, xq)?;
        let k = self.k.forward(store, xkv)?;
        let v = self.v.forward(store, xkv)?;

        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Tensor::zeros(&[xq.rows(), self.dim]);
        let mut weights = Vec::with_capacity(groups.len() * self.heads);
        let AttentionOptions {
            mut dropout,
            order_invariant,
        } = opts;
        let mut masks: Option<Vec<Vec<f64>>> = dropout.as_ref().map(|_| Vec::with_capacity(weights.capacity()));

        let mut order: Vec<usize> = Vec::new();
        let mut terms = Vec::new();
        for g in groups {
            let (nq, nk) = (g.queries.len(), g.keys.len());
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let qg = gather(&q, &g.queries, cols.clone());
                let kg = gather(&k, &g.keys, cols.clone());
                let vg = gather(&v, &g.keys, cols.clone());
                let mut w = vec![0.0; nq * nk];
                gemm(nq, dh, nk, (&qg, dh, 1), (&kg, 1, dh), 0.0, &mut w);
                for row in w.chunks_mut(nk) {
                    let max = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
                    for s in row.iter_mut() {
                        *s = (*s * scale - max).exp();
                    }
                    let denom = if order_invariant {
                        terms.clear();
                        terms.extend_from_slice(row);
                        order_invariant_sum(&mut terms)
                    } else {
                        row.iter().sum()
                    };
                    for s in row.iter_mut() {
                        *s /= denom;
                    }
                }

                // Effective weights after dropout.
                let eff = match dropout.as_mut() {
                    Some((d, rng)) => {
                        let m = d.mask(nq * nk, rng);
                        let eff = w.iter().zip(&m).map(|(p, m)| p * m).collect();
                        if let Some(ms) = masks.as_mut() {
                            ms.push(m);
                        }
                        eff
                    }
                    None => w.clone(),
                };

                let mut out = vec![0.0; nq * dh];
                if order_invariant {
                    // Accumulate keys in an order fixed by their content, so a
                    // permutation of the keys leaves every sum bit-identical.
                    for (a, orow) in out.chunks_mut(dh).enumerate() {
                        let p = &eff[a * nk..(a + 1) * nk];
                        order.clear();
                        order.extend(0..nk);
                        order.sort_unstable_by(|&x, &y| {
                            p[x].total_cmp(&p[y]).then_with(|| {
                                let (vx, vy) = (&vg[x * dh..(x + 1) * dh], &vg[y * dh..(y + 1) * dh]);
                                vx.iter()
                                    .zip(vy)
                                    .map(|(a, b)| a.total_cmp(b))
                                    .find(|o| o.is_ne())
                                    .unwrap_or(std::cmp::Ordering::Equal)
                            })
                        });
                        for &b in &order {
                            axpy(p[b], &vg[b * dh..(b + 1) * dh], orow);
                        }
                    }
                } else {
                    gemm(nq, nk, dh, (&eff, nk, 1), (&vg, dh, 1), 0.0, &mut out);
                }
                scatter(&mut concat, &g.queries, cols, &out);
                weights.push(w);
            }
        }
        let y = self.o.forward(store, &concat)?;
        y.debug_check_finite("attention");
        Ok((
            y,
            AttentionCache {
                xq: xq.clone(),
                xkv: xkv.clone(),
                q,
                k,
                v,
                concat,
                groups: groups.to_vec(),
                weights,
                masks,
            },
        ))
    }

    /// Returns `(dL/dxq, dL/dxkv)`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &AttentionCache,
        dy: &Tensor,
        grads: &mut Gradients,
    ) -> (Tensor, Tensor) {
        let dconcat = self.o.backward(store, &cache.concat, dy, grads);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());

        for (gi, g) in cache.groups.iter().enumerate() {
            let (nq, nk) = (g.queries.len(), g.keys.len());
            for h in 0..self.heads {
                let idx = gi * self.heads + h;
                let cols = h * dh..(h + 1) * dh;
                let p = &cache.weights[idx];
                let mask = cache.masks.as_ref().map(|m| &m[idx]);
                let eff: Vec<f64> = match mask {
                    Some(m) => p.iter().zip(m).map(|(p, m)| p * m).collect(),
                    None => p.clone(),
                };
                let dout = gather(&dconcat, &g.queries, cols.clone());
                let qg = gather(&cache.q, &g.queries, cols.clone());
                let kg = gather(&cache.k, &g.keys, cols.clone());
                let vg = gather(&cache.v, &g.keys, cols.clone());

                let mut dvg = vec![0.0; nk * dh];
                gemm(nk, nq, dh, (&eff, 1, nk), (&dout, dh, 1), 0.0, &mut dvg);
                scatter(&mut dv, &g.keys, cols.clone(), &dvg);

                let mut ds = vec![0.0; nq * nk];
                gemm(nq, dh, nk, (&dout, dh, 1), (&vg, 1, dh), 0.0, &mut ds);
                for (a, row) in ds.chunks_mut(nk).enumerate() {
                    let pr = &p[a * nk..(a + 1) * nk];
                    if let Some(m) = mask {
                        for (d, m) in row.iter_mut().zip(&m[a * nk..(a + 1) * nk]) {
                            *d *= m;
                        }
                    }
                    let inner = dot(pr, row);
                    for (d, &pb) in row.iter_mut().zip(pr) {
                        *d = pb * (*d - inner) * scale;
                    }
                }
                let mut dqg = vec![0.0; nq * dh];
                gemm(nq, nk, dh, (&ds, nk, 1), (&kg, dh, 1), 0.0, &mut dqg);
                scatter(&mut dq, &g.queries, cols.clone(), &dqg);
                let mut dkg = vec![0.0; nk * dh];
                gemm(nk, nq, dh, (&ds, 1, nk), (&qg, dh, 1), 0.0, &mut dkg);
                scatter(&mut dk, &g.keys, cols, &dkg);
            }
        }
        let dxq = self.q.backward(store, &cache.xq, &dq, grads);
        let mut dxkv = self.k.backward(store, &cache.xkv, &dk, grads);
        dxkv.add_assign(&self.v.backward(store, &cache.xkv, &dv, grads));
        (dxq, dxkv)
    }
}

/// Rows `rows`, columns `cols` of `t` as a dense row-major block.
fn gather(t: &Tensor, rows: &[usize], cols: Range<usize>) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in rows {
        out.extend_from_slice(&t.row(r)[cols.clone()]);
    }
    out
}

/// Adds a dense block back into rows `rows`, columns `cols` of `t`.
fn scatter(t: &mut Tensor, rows: &[usize], cols: Range<usize>, block: &[f64]) {
    let w = cols.len();
    for (i, &r) in rows.iter().enumerate() {
        for (o, b) in t.row_mut(r)[cols.clone()].iter_mut().zip(&block[i * w..(i + 1) * w]) {
            *o += b;
        }
    }
}
