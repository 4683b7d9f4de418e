//! Polynomial-chaos surrogate `f̂(m) = Σ_α c_α Ψ_α(ξ(m))` of the
//! parameter-to-observable map.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bayes::GaussianPrior;
use crate::error::{Error, Result};

use super::basis::{standardize, MultiIndexSet};
use super::quadrature::{sparse_rule, tensor_rule, QuadratureRule, RuleKind};
use super::selection::{stochastic_testing_select, Collocation};

/// Where the model is sampled and how coefficients are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    /// `c_α = Σ_i w_i Ψ_α(ξ_i) f(m_i)`.
    Projection(QuadratureRule),
    /// `V C = F` on square collocation nodes.
    Interpolation(Collocation),
}

impl Design {
    /// Design for an order-`p` basis: tensor and sparse rules project,
    /// stochastic testing interpolates on nodes chosen from the tensor rule.
    pub fn for_order(kind: RuleKind, basis: &MultiIndexSet) -> Result<Self> {
        let (n, p) = (basis.dim(), basis.order());
        Ok(match kind {
            RuleKind::Tensor => Design::Projection(tensor_rule(n, p)?),
            RuleKind::Sparse => Design::Projection(sparse_rule(n, p + 1)?),
            RuleKind::StochasticTesting => {
                Design::Interpolation(stochastic_testing_select(&tensor_rule(n, p)?, basis)?)
            }
        })
    }

    pub fn rule(&self) -> &QuadratureRule {
        match self {
            Design::Projection(r) => r,
            Design::Interpolation(c) => &c.rule,
        }
    }

    /// Parameter-space points where the model must be evaluated.
    pub fn nodes(&self, prior: &GaussianPrior) -> Vec<Vec<f64>> {
        self.rule().physical_nodes(prior)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub basis: MultiIndexSet,
    /// One row per basis function, one column per observable.
    pub coefficients: Vec<Vec<f64>>,
    /// Prior defining the standardized variable.
    pub prior: GaussianPrior,
    pub rule: RuleKind,
    /// Forward simulations spent on construction.
    pub forward_solves: usize,
}

impl Surrogate {
    /// Fits coefficients from model outputs at `design.nodes(prior)`.
    pub fn fit(
        basis: MultiIndexSet,
        design: &Design,
        prior: GaussianPrior,
        values: &[Vec<f64>],
    ) -> Result<Self> {
        let rule = design.rule();
        if values.len() != rule.len() {
            return Err(Error::Dimension {
                what: "node outputs",
                expected: rule.len(),
                got: values.len(),
            });
        }
        if basis.dim() != prior.dim() {
            return Err(Error::Dimension {
                what: "prior",
                expected: basis.dim(),
                got: prior.dim(),
            });
        }
        let q = values.first().map_or(0, Vec::len);
        if q == 0 || values.iter().any(|v| v.len() != q) {
            return Err(Error::Invalid(
                "node outputs must be non-empty and of equal length".into(),
            ));
        }
        let k = basis.len();
        let coefficients = match design {
            Design::Projection(rule) => {
                let mut c = vec![vec![0.0; q]; k];
                for ((xi, w), f) in rule.nodes.iter().zip(&rule.weights).zip(values) {
                    let psi = basis.evaluate(xi)?;
                    for (row, p) in c.iter_mut().zip(&psi) {
                        let s = w * p;
                        row.iter_mut().zip(f).for_each(|(cv, fv)| *cv += s * fv);
                    }
                }
                c
            }
            Design::Interpolation(col) => {
                if col.matrix.nrows() != k || col.matrix.ncols() != k {
                    return Err(Error::Dimension {
                        what: "collocation matrix",
                        expected: k,
                        got: col.matrix.nrows(),
                    });
                }
                let f = DMatrix::from_fn(k, q, |r, c| values[r][c]);
                let sol = col
                    .matrix
                    .clone()
                    .lu()
                    .solve(&f)
                    .ok_or(Error::SingularCollocation(col.condition))?;
                (0..k)
                    .map(|r| sol.row(r).iter().copied().collect())
                    .collect()
            }
        };
        let s = Self {
            basis,
            coefficients,
            prior,
            rule: rule.kind,
            forward_solves: rule.len(),
        };
        s.validate()?;
        Ok(s)
    }

    /// Checks internal consistency (e.g. after loading from a file).
    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        if self.coefficients.len() != self.basis.len() {
            return Err(Error::Dimension {
                what: "coefficient rows",
                expected: self.basis.len(),
                got: self.coefficients.len(),
            });
        }
        let q = self.n_outputs();
        if self.coefficients.iter().any(|r| r.len() != q) {
            return Err(Error::Invalid("coefficient rows differ in length".into()));
        }
        if self.coefficients.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("surrogate coefficients"));
        }
        if self.prior.dim() != self.basis.dim() {
            return Err(Error::Dimension {
                what: "prior",
                expected: self.basis.dim(),
                got: self.prior.dim(),
            });
        }
        Ok(())
    }

    pub fn n_outputs(&self) -> usize {
        self.coefficients.first().map_or(0, Vec::len)
    }

    /// `f̂(m)`.
    pub fn evaluate(&self, m: &[f64]) -> Result<Vec<f64>> {
        let psi = self.basis.evaluate(&standardize(&self.prior, m))?;
        let mut out = vec![0.0; self.n_outputs()];
        for (row, p) in self.coefficients.iter().zip(&psi) {
            out.iter_mut().zip(row).for_each(|(o, c)| *o += p * c);
        }
        Ok(out)
    }
}

/// Runs `forward` at every design node in order and fits the surrogate.
/// A failing node is reported with its parameter values.
pub fn build_surrogate<F>(
    basis: MultiIndexSet,
    design: &Design,
    prior: GaussianPrior,
    mut forward: F,
) -> Result<Surrogate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let values = design
        .nodes(&prior)
        .iter()
        .map(|m| {
            forward(m).map_err(|e| Error::ForwardFailed {
                m: m.clone(),
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Surrogate::fit(basis, design, prior, &values)
}
