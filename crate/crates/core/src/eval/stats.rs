use itertools::Itertools;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest sample size whose p-value is computed by full enumeration.
pub const EXACT_MAX_N: usize = 8;
pub const P_THRESHOLD: f64 = 0.05;
pub const RHO_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// One-sided p-value for positive association.
    pub p_value: f64,
    /// Set when either input is constant; `rho` is then 0 and `p_value` 1.
    pub degenerate: bool,
}

impl Spearman {
    /// Strong monotone alignment: `p < 0.05` and `ρ > 0.5`.
    pub fn passes(&self) -> bool {
        self.p_value < P_THRESHOLD && self.rho > RHO_THRESHOLD
    }
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let order: Vec<usize> = (0..x.len()).sorted_by(|&a, &b| x[a].total_cmp(&x[b])).collect();
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with a one-sided test for positive
/// association: exact permutation enumeration for `n ≤ 8`, Student-t
/// approximation above.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "spearman inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("spearman needs n ≥ 3, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("spearman input contains non-finite values".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let Some(rho) = pearson(&rx, &ry) else {
        return Ok(Spearman {
            rho: 0.0,
            p_value: 1.0,
            degenerate: true,
        });
    };
    let p_value = if n <= EXACT_MAX_N {
        exact_p(&rx, &ry, rho)
    } else if rho >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        1.0 - dist.cdf(t)
    };
    Ok(Spearman {
        rho,
        p_value,
        degenerate: false,
    })
}

/// Share of the `n!` reorderings of `ry` whose correlation with `rx` is at
/// least the observed one.
fn exact_p(rx: &[f64], ry: &[f64], observed: f64) -> f64 {
    let n = rx.len();
    let mut total = 0u64;
    let mut hits = 0u64;
    for perm in (0..n).permutations(n) {
        let permuted: Vec<f64> = perm.iter().map(|&i| ry[i]).collect();
        let r = pearson(rx, &permuted).unwrap_or(0.0);
        total += 1;
        if r >= observed - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}
