//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;

/// Gradients below this magnitude are compared absolutely rather than
/// relatively; finite-difference noise at `h = 1e-5` is around 1e-11.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name (or `input`) and flat index of the worst entry.
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of a scalar loss against central
/// differences `(L(θ+h) − L(θ−h)) / 2h` for every parameter entry and every
/// input entry.
pub fn grad_check(
    store: &ParamStore,
    input: &Tensor,
    h: f64,
    loss: impl Fn(&ParamStore, &Tensor) -> f64,
    analytic: impl Fn(&ParamStore, &Tensor) -> (Gradients, Tensor),
) -> GradCheckReport {
    let (grads, dinput) = analytic(store, input);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |name: &str, i: usize, a: f64, n: f64| {
        let e = relative_error(a, n);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = format!("{name}[{i}] analytic {a:.6e} numeric {n:.6e}");
        }
    };

    let mut probe = store.clone();
    for (pi, param) in store.params().iter().enumerate() {
        for i in 0..param.value.len() {
            let orig = param.value.data()[i];
            probe.params_mut()[pi].value.data_mut()[i] = orig + h;
            let plus = loss(&probe, input);
            probe.params_mut()[pi].value.data_mut()[i] = orig - h;
            let minus = loss(&probe, input);
            probe.params_mut()[pi].value.data_mut()[i] = orig;
            record(
                &param.name,
                i,
                grads.tensors()[pi].data()[i],
                (plus - minus) / (2.0 * h),
            );
        }
    }
    let mut x = input.clone();
    for i in 0..input.len() {
        let orig = input.data()[i];
        x.data_mut()[i] = orig + h;
        let plus = loss(store, &x);
        x.data_mut()[i] = orig - h;
        let minus = loss(store, &x);
        x.data_mut()[i] = orig;
        record("input", i, dinput.data()[i], (plus - minus) / (2.0 * h));
    }
    report
}

/// Scalar probe `L(y) = Σ r ⊙ y` with fixed random weights `r`, so
/// `dL/dy = r`.
#[derive(Debug, Clone)]
pub struct ProbeLoss {
    pub weights: Tensor,
}

impl ProbeLoss {
    pub fn new(shape: &[usize], rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self {
            weights: Tensor::from_vec(shape, data).expect("shape product"),
        }
    }

    pub fn value(&self, y: &Tensor) -> f64 {
        self.weights.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
    }

    pub fn grad(&self) -> Tensor {
        self.weights.clone()
    }
}
