use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters in registration order. That order is the checkpoint
/// order and the order gradients are reduced in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Zeroed gradient buffer shaped like this store.
    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            grads: self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    /// Copies a reduced gradient buffer into the parameters' `grad` fields.
    pub fn set_grads(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            p.grad.data_mut().copy_from_slice(g.data());
        }
    }

    /// Overwrites every value with draws from `U(-scale, scale)`.
    pub fn randomize(&mut self, rng: &mut impl Rng, scale: f64) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }

    /// Replaces values from another store with identical names and shapes.
    pub fn load_values(&mut self, names: &[String], values: Vec<Tensor>) -> Result<()> {
        if names.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model expects {}",
                names.len(),
                self.params.len()
            )));
        }
        for ((p, name), value) in self.params.iter_mut().zip(names).zip(values) {
            if &p.name != name || p.value.shape() != value.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {name} {:?} does not match {} {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }
}

/// Gradient accumulator mirroring a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    #[inline]
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }
}

/// `U(-1/√fan_in, 1/√fan_in)` initialisation.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}
