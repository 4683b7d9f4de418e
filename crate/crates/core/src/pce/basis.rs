//! Total-order multi-index sets and the orthonormal Hermite basis.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bayes::GaussianPrior;
use crate::error::{Error, Result};
use crate::math::sqrt;

/// All `α ∈ ℕⁿ` with `|α|₁ ≤ p`, graded: by total degree, then
/// lexicographically descending within a degree. The zero index is first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    n: usize,
    p: usize,
    indices: Vec<Vec<usize>>,
}

fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first);
        compositions(total - first, parts - 1, prefix, out);
        prefix.pop();
    }
}

impl MultiIndexSet {
    pub fn total_order(n: usize, p: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("basis needs at least one variable".into()));
        }
        let mut indices = Vec::new();
        for d in 0..=p {
            compositions(d, n, &mut Vec::with_capacity(n), &mut indices);
        }
        Ok(Self { n, p, indices })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.p
    }

    /// Number of basis functions `K = (p+n)! / (p! n!)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// Checks a set obtained from outside (e.g. a file) against its order.
    pub fn validate(&self) -> Result<()> {
        let fresh = Self::total_order(self.n, self.p)?;
        if fresh.indices != self.indices {
            return Err(Error::Invalid(
                "multi-index set is not the graded total-order set".into(),
            ));
        }
        Ok(())
    }

    fn univariate(&self, xi: &[f64]) -> Result<Vec<Vec<f64>>> {
        if xi.len() != self.n {
            return Err(Error::Dimension {
                what: "basis point",
                expected: self.n,
                got: xi.len(),
            });
        }
        if xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("basis point"));
        }
        Ok(xi.iter().map(|&x| hermite_values(self.p + 1, x)).collect())
    }

    /// `Ψ_α(ξ)` for every α, in set order.
    pub fn evaluate(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let psi = self.univariate(xi)?;
        Ok(self
            .indices
            .iter()
            .map(|a| a.iter().enumerate().map(|(i, &k)| psi[i][k]).product())
            .collect())
    }

    /// Values, gradients and Hessians of every basis function at `ξ`.
    pub fn evaluate_derivatives(&self, xi: &[f64]) -> Result<BasisDerivatives> {
        let n = self.n;
        let psi = self.univariate(xi)?;
        let d1 = |i: usize, k: usize| {
            if k >= 1 {
                sqrt(k as f64) * psi[i][k - 1]
            } else {
                0.0
            }
        };
        let d2 = |i: usize, k: usize| {
            if k >= 2 {
                sqrt((k * (k - 1)) as f64) * psi[i][k - 2]
            } else {
                0.0
            }
        };
        let kk = self.len();
        let mut out = BasisDerivatives {
            n,
            values: vec![0.0; kk],
            gradients: vec![0.0; kk * n],
            hessians: vec![0.0; kk * n * n],
        };
        let mut factor = vec![0.0; n];
        for (j, a) in self.indices.iter().enumerate() {
            for i in 0..n {
                factor[i] = psi[i][a[i]];
            }
            // Product of the univariate factors except those listed.
            let others = |skip: &[usize]| -> f64 {
                (0..n)
                    .filter(|i| !skip.contains(i))
                    .map(|i| factor[i])
                    .product()
            };
            out.values[j] = others(&[]);
            for k in 0..n {
                out.gradients[j * n + k] = d1(k, a[k]) * others(&[k]);
                for l in 0..n {
                    out.hessians[(j * n + k) * n + l] = if k == l {
                        d2(k, a[k]) * others(&[k])
                    } else {
                        d1(k, a[k]) * d1(l, a[l]) * others(&[k, l])
                    };
                }
            }
        }
        Ok(out)
    }
}

/// Basis values with first and second derivatives in `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDerivatives {
    n: usize,
    pub values: Vec<f64>,
    /// `K × n`, row-major.
    pub gradients: Vec<f64>,
    /// `K × n × n`, row-major.
    pub hessians: Vec<f64>,
}

impl BasisDerivatives {
    pub fn gradient(&self, j: usize) -> &[f64] {
        &self.gradients[j * self.n..(j + 1) * self.n]
    }

    pub fn hessian(&self, j: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.hessians[j * nn..(j + 1) * nn]
    }
}

/// `ψ_k(x) = He_k(x) / √k!` for `k < count`.
pub fn hermite_values(count: usize, x: f64) -> Vec<f64> {
    let mut v = vec![0.0; count];
    if count > 0 {
        v[0] = 1.0;
    }
    if count > 1 {
        v[1] = x;
    }
    for k in 1..count.saturating_sub(1) {
        v[k + 1] = (x * v[k] - sqrt(k as f64) * v[k - 1]) / sqrt((k + 1) as f64);
    }
    v
}

/// `Ψ_α(ξ)`, a product of orthonormal probabilists' Hermite polynomials.
pub fn hermite_eval(alpha: &[usize], xi: &[f64]) -> Result<f64> {
    if alpha.len() != xi.len() {
        return Err(Error::Dimension {
            what: "multi-index",
            expected: xi.len(),
            got: alpha.len(),
        });
    }
    if xi.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("basis point"));
    }
    Ok(alpha
        .iter()
        .zip(xi)
        .map(|(&k, &x)| hermite_values(k + 1, x)[k])
        .product())
}

/// `ξ_i = (m_i − mpr_i) / σ_i`.
pub fn standardize(prior: &GaussianPrior, m: &[f64]) -> Vec<f64> {
    m.iter()
        .zip(&prior.mean)
        .zip(&prior.variances)
        .map(|((x, mu), v)| (x - mu) / sqrt(*v))
        .collect()
}

pub fn unstandardize(prior: &GaussianPrior, xi: &[f64]) -> Vec<f64> {
    xi.iter()
        .zip(&prior.mean)
        .zip(&prior.variances)
        .map(|((x, mu), v)| mu + x * sqrt(*v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pce::quadrature::tensor_rule;

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn cardinality_and_ordering() {
        for n in 1..=3 {
            for p in 1..=3 {
                let set = MultiIndexSet::total_order(n, p).unwrap();
                assert_eq!(set.len(), binomial(p + n, n));
                assert!(set
                    .indices()
                    .windows(2)
                    .all(|w| w[0].iter().sum::<usize>() <= w[1].iter().sum::<usize>()));
            }
        }
        let set = MultiIndexSet::total_order(3, 2).unwrap();
        assert_eq!(set.len(), 10);
        assert_eq!(set.indices()[0], [0, 0, 0]);
        assert_eq!(set.indices()[1], [1, 0, 0]);
        assert_eq!(set.indices()[3], [0, 0, 1]);
        assert_eq!(set.indices()[4], [2, 0, 0]);
        set.validate().unwrap();
    }

    #[test]
    fn known_values() {
        assert_eq!(hermite_eval(&[0, 0, 0], &[0.3, -2.0, 7.0]).unwrap(), 1.0);
        let v = hermite_eval(&[2, 0, 0], &[0.0, 1.0, 1.0]).unwrap();
        assert!((v + core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        // He_3(x) = x³ − 3x, normalized by √6.
        let x = 1.7;
        assert!((hermite_values(4, x)[3] - (x * x * x - 3.0 * x) / sqrt(6.0)).abs() < 1e-14);
        assert!(hermite_eval(&[1], &[f64::NAN]).is_err());
    }

    #[test]
    fn gram_matrix_is_identity_under_gauss_rule() {
        let set = MultiIndexSet::total_order(3, 3).unwrap();
        let rule = tensor_rule(3, 3).unwrap();
        let k = set.len();
        let mut gram = vec![0.0; k * k];
        for (xi, w) in rule.nodes.iter().zip(&rule.weights) {
            let psi = set.evaluate(xi).unwrap();
            for a in 0..k {
                for b in 0..k {
                    gram[a * k + b] += w * psi[a] * psi[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..k {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (gram[a * k + b] - expect).abs() < 1e-12,
                    "({a},{b}) {}",
                    gram[a * k + b]
                );
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let set = MultiIndexSet::total_order(3, 3).unwrap();
        let xi = [0.4, -1.1, 0.7];
        let d = set.evaluate_derivatives(&xi).unwrap();
        assert_eq!(d.values, set.evaluate(&xi).unwrap());
        let h = 1e-6;
        for k in 0..3 {
            let (mut p, mut m) = (xi, xi);
            p[k] += h;
            m[k] -= h;
            let dp = set.evaluate_derivatives(&p).unwrap();
            let dm = set.evaluate_derivatives(&m).unwrap();
            for j in 0..set.len() {
                let fd = (dp.values[j] - dm.values[j]) / (2.0 * h);
                assert!((fd - d.gradient(j)[k]).abs() < 1e-8);
                for l in 0..3 {
                    let fd2 = (dp.gradient(j)[l] - dm.gradient(j)[l]) / (2.0 * h);
                    assert!((fd2 - d.hessian(j)[k * 3 + l]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn standardization_round_trip() {
        let prior = GaussianPrior::new(vec![24.0, 6.0, 3.1], vec![5.76, 0.36, 0.09]).unwrap();
        assert_eq!(standardize(&prior, &[24.0, 6.0, 3.1]), [0.0, 0.0, 0.0]);
        let one = standardize(&prior, &[26.4, 6.6, 3.4]);
        assert!(one.iter().all(|x| (x - 1.0).abs() < 1e-14));
        let m = [21.3, 6.77, 2.95];
        let back = unstandardize(&prior, &standardize(&prior, &m));
        assert!(back
            .iter()
            .zip(&m)
            .all(|(a, b)| (a - b).abs() <= 1e-15 * b.abs()));
    }
}
