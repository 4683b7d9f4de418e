//! Gauss–Hermite rules for the standard normal measure: tensor products
//! and Smolyak sparse grids.
//!
//! The sparse grids use the nested sequence 1, 3, 9 (Gauss–Hermite 3 and
//! its Kronrod extension). Level `l` takes the smallest member exact for
//! degree `2l − 1`, so the level-`l` grid integrates total degree `2l − 1`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes::GaussianPrior;
use crate::error::{Error, Result};
use crate::math::{cos, sqrt};

use super::basis::unstandardize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Tensor,
    Sparse,
    StochasticTesting,
}

/// Nodes in standardized coordinates and their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes mapped to parameter space.
    pub fn physical_nodes(&self, prior: &GaussianPrior) -> Vec<Vec<f64>> {
        self.nodes
            .iter()
            .map(|xi| unstandardize(prior, xi))
            .collect()
    }
}

/// `E[x^k]` for `x ~ N(0, 1)`.
fn normal_moment(k: usize) -> f64 {
    if k % 2 == 1 {
        0.0
    } else {
        (1..k).step_by(2).map(|j| j as f64).product()
    }
}

/// `m`-point Gauss–Hermite rule (Golub–Welsch), weights summing to one.
/// Nodes ascend and are exactly symmetric.
pub fn gauss_hermite(m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if m == 0 {
        return Err(Error::Invalid(
            "a quadrature rule needs at least one node".into(),
        ));
    }
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            sqrt(i.max(j) as f64)
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            (
                eig.eigenvalues[i],
                eig.eigenvectors[(0, i)] * eig.eigenvectors[(0, i)],
            )
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..m / 2 {
        let j = m - 1 - i;
        let xs = 0.5 * (x[j] - x[i]);
        let ws = 0.5 * (w[i] + w[j]);
        (x[i], x[j], w[i], w[j]) = (-xs, xs, ws, ws);
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= total);
    Ok((x, w))
}

/// Tensor product of `(p+1)`-point Gauss–Hermite rules in `n` variables.
/// The last coordinate varies fastest.
pub fn tensor_rule(n: usize, p: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::Invalid(
            "tensor rule needs at least one variable".into(),
        ));
    }
    let (x, w) = gauss_hermite(p + 1)?;
    let m = x.len();
    let count = m.pow(n as u32);
    let mut nodes = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for flat in 0..count {
        let mut rem = flat;
        let mut node = vec![0.0; n];
        let mut weight = 1.0;
        for d in (0..n).rev() {
            node[d] = x[rem % m];
            weight *= w[rem % m];
            rem /= m;
        }
        nodes.push(node);
        weights.push(weight);
    }
    Ok(QuadratureRule {
        kind: RuleKind::Tensor,
        nodes,
        weights,
    })
}

/// Nested univariate nodes: `[0, ∓√3, ∓x₁, ∓x₂, ∓x₃]` with the Kronrod
/// points `x₁ < x₂ < x₃` that extend the 3-point rule to 9 points.
fn nested_nodes() -> Vec<f64> {
    let s3 = sqrt(3.0);
    // The extension polynomial p(x) = y³ + a y² + b y + c, y = x², is
    // orthogonal to x·(x² − 3)·x^k for k = 1, 3, 5.
    let row = |j: usize, k: usize| normal_moment(j + k + 3) - 3.0 * normal_moment(j + k + 1);
    let a = DMatrix::from_fn(3, 3, |r, c| row(4 - 2 * c, 2 * r + 1));
    let rhs = DVector::from_fn(3, |r, _| -row(6, 2 * r + 1));
    let coef = a.lu().solve(&rhs).expect("moment system is regular");
    let ys = cubic_roots(coef[0], coef[1], coef[2]);
    let mut out = vec![0.0, -s3, s3];
    for y in ys {
        out.push(-sqrt(y));
        out.push(sqrt(y));
    }
    out
}

/// Real roots (ascending) of `y³ + a y² + b y + c` with three real roots.
fn cubic_roots(a: f64, b: f64, c: f64) -> [f64; 3] {
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let r = sqrt(-p / 3.0);
    let phi = libm::acos((3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0));
    let mut roots = [0.0; 3];
    for (k, root) in roots.iter_mut().enumerate() {
        *root = 2.0 * r * cos((phi - 2.0 * core::f64::consts::PI * k as f64) / 3.0) - a / 3.0;
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Interpolatory weights of the symmetric rule on `ids` (indices into the
/// nested node table).
fn symmetric_weights(table: &[f64], ids: &[usize]) -> Vec<f64> {
    // Unknowns: one weight per node pair (plus the centre).
    let pairs: Vec<usize> = ids
        .iter()
        .copied()
        .filter(|&i| i == 0 || i % 2 == 0)
        .collect();
    let k = pairs.len();
    let a = DMatrix::from_fn(k, k, |r, c| {
        let x = table[pairs[c]];
        let mult = if pairs[c] == 0 { 1.0 } else { 2.0 };
        mult * (0..r).fold(1.0, |acc, _| acc * x * x)
    });
    let rhs = DVector::from_fn(k, |r, _| normal_moment(2 * r));
    let w = a.lu().solve(&rhs).expect("distinct nodes");
    ids.iter()
        .map(|&i| {
            let key = if i == 0 || i % 2 == 0 { i } else { i + 1 };
            w[pairs.iter().position(|&p| p == key).expect("paired node")]
        })
        .collect()
}

/// Univariate rule for sparse level `l` as node ids and weights.
fn nested_rule(table: &[f64], level: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let ids: Vec<usize> = match level {
        1 => vec![0],
        2..=3 => vec![0, 1, 2],
        4..=8 => (0..9).collect(),
        _ => return Err(Error::UnsupportedLevel(level)),
    };
    let w = symmetric_weights(table, &ids);
    Ok((ids, w))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Smolyak combination of the nested rules. Level 1 is the single centre
/// node; level `l` is exact for polynomials of total degree `2l − 1`.
/// Supported levels: 1 to 8.
pub fn sparse_rule(n: usize, level: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::Invalid(
            "sparse rule needs at least one variable".into(),
        ));
    }
    if !(1..=8).contains(&level) {
        return Err(Error::UnsupportedLevel(level));
    }
    let table = nested_nodes();
    let rules: Vec<(Vec<usize>, Vec<f64>)> = (1..=level)
        .map(|l| nested_rule(&table, l))
        .collect::<Result<_>>()?;
    let q = n + level - 1;
    let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut levels = vec![1usize; n];
    loop {
        let s: usize = levels.iter().sum();
        if s + n > q && s <= q {
            let coef = if (q - s) % 2 == 0 { 1.0 } else { -1.0 } * binomial(n - 1, q - s);
            let factors: Vec<&(Vec<usize>, Vec<f64>)> =
                levels.iter().map(|&l| &rules[l - 1]).collect();
            let mut pos = vec![0usize; n];
            loop {
                let key: Vec<usize> = (0..n).map(|d| factors[d].0[pos[d]]).collect();
                let w: f64 = (0..n).map(|d| factors[d].1[pos[d]]).product();
                *acc.entry(key).or_insert(0.0) += coef * w;
                let mut d = n;
                while d > 0 {
                    d -= 1;
                    pos[d] += 1;
                    if pos[d] < factors[d].0.len() {
                        break;
                    }
                    pos[d] = 0;
                }
                if pos.iter().all(|&p| p == 0) {
                    break;
                }
            }
        }
        // Next level multi-index in [1, level]^n.
        let mut d = n;
        loop {
            if d == 0 {
                let nodes = acc
                    .keys()
                    .map(|k| k.iter().map(|&i| table[i]).collect())
                    .collect();
                let weights = acc.values().copied().collect();
                return Ok(QuadratureRule {
                    kind: RuleKind::Sparse,
                    nodes,
                    weights,
                });
            }
            d -= 1;
            levels[d] += 1;
            if levels[d] <= level {
                break;
            }
            levels[d] = 1;
        }
    }
}
