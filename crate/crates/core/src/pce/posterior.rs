//! Negative log posterior with the surrogate in place of the forward
//! model, in closed form, and its multi-start minimization.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::bayes::{covariance_from_hessian, GaussianPrior, PosteriorSummary, SolverStats};
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::observation::{NoiseModel, ObservationSet};
use crate::optimizer::{self, OptimizeResult};
use crate::rng::NormalStream;

use super::basis::standardize;
use super::surrogate::Surrogate;

/// `Ĵ(m) = ½‖f̂(m) − d‖²_{Γn⁻¹} + ½‖m − mpr‖²_{Γpr⁻¹}`.
#[derive(Debug, Clone, Copy)]
pub struct SurrogatePosterior<'a> {
    pub surrogate: &'a Surrogate,
    pub obs: &'a ObservationSet,
    pub noise: &'a NoiseModel,
    pub prior: &'a GaussianPrior,
}

/// Misfit pieces at one point, in standardized coordinates.
struct Local {
    value: f64,
    grad_xi: Vec<f64>,
    hess_xi: Option<Vec<f64>>,
}

impl<'a> SurrogatePosterior<'a> {
    pub fn new(
        surrogate: &'a Surrogate,
        obs: &'a ObservationSet,
        noise: &'a NoiseModel,
        prior: &'a GaussianPrior,
    ) -> Result<Self> {
        let q = obs.data.len();
        if surrogate.n_outputs() != q {
            return Err(Error::Dimension {
                what: "surrogate outputs",
                expected: q,
                got: surrogate.n_outputs(),
            });
        }
        if noise.variances.len() != q {
            return Err(Error::Dimension {
                what: "noise variances",
                expected: q,
                got: noise.variances.len(),
            });
        }
        if prior.dim() != surrogate.basis.dim() {
            return Err(Error::Dimension {
                what: "prior",
                expected: surrogate.basis.dim(),
                got: prior.dim(),
            });
        }
        Ok(Self {
            surrogate,
            obs,
            noise,
            prior,
        })
    }

    fn local(&self, m: &[f64], with_hessian: bool) -> Result<Local> {
        let s = self.surrogate;
        let n = s.basis.dim();
        if m.len() != n {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: n,
                got: m.len(),
            });
        }
        let d = s.basis.evaluate_derivatives(&standardize(&s.prior, m))?;
        let q = self.obs.data.len();
        // f̂ and its Jacobian in ξ (q × n).
        let mut f = vec![0.0; q];
        let mut jac = vec![0.0; q * n];
        for (j, row) in s.coefficients.iter().enumerate() {
            let (v, g) = (d.values[j], d.gradient(j));
            for (i, c) in row.iter().enumerate() {
                f[i] += c * v;
                for k in 0..n {
                    jac[i * n + k] += c * g[k];
                }
            }
        }
        let r: Vec<f64> = (0..q)
            .map(|i| (f[i] - self.obs.data[i]) / self.noise.variances[i])
            .collect();
        let value = 0.5
            * (0..q)
                .map(|i| r[i] * (f[i] - self.obs.data[i]))
                .sum::<f64>();
        let mut grad_xi = vec![0.0; n];
        for i in 0..q {
            for k in 0..n {
                grad_xi[k] += r[i] * jac[i * n + k];
            }
        }
        let hess_xi = with_hessian.then(|| {
            let mut h = vec![0.0; n * n];
            for i in 0..q {
                let w = 1.0 / self.noise.variances[i];
                for k in 0..n {
                    for l in 0..n {
                        h[k * n + l] += w * jac[i * n + k] * jac[i * n + l];
                    }
                }
            }
            for (j, row) in s.coefficients.iter().enumerate() {
                let b: f64 = row.iter().zip(&r).map(|(c, ri)| c * ri).sum();
                h.iter_mut()
                    .zip(d.hessian(j))
                    .for_each(|(hv, dv)| *hv += b * dv);
            }
            h
        });
        Ok(Local {
            value,
            grad_xi,
            hess_xi,
        })
    }

    fn scales(&self) -> Vec<f64> {
        self.surrogate
            .prior
            .variances
            .iter()
            .map(|v| sqrt(*v))
            .collect()
    }

    pub fn value(&self, m: &[f64]) -> Result<f64> {
        Ok(self.local(m, false)?.value + self.prior.value(m))
    }

    pub fn value_and_gradient(&self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        let loc = self.local(m, false)?;
        let pg = self.prior.gradient(m);
        let grad = loc
            .grad_xi
            .iter()
            .zip(self.scales())
            .zip(pg)
            .map(|((g, s), p)| g / s + p)
            .collect();
        Ok((loc.value + self.prior.value(m), grad))
    }

    /// Exact Hessian in parameter space, symmetric to the last bit.
    pub fn hessian(&self, m: &[f64]) -> Result<DMatrix<f64>> {
        let loc = self.local(m, true)?;
        let h = loc.hess_xi.expect("requested");
        let s = self.scales();
        let n = s.len();
        Ok(DMatrix::from_fn(n, n, |k, l| {
            let prior = if k == l {
                1.0 / self.prior.variances[k]
            } else {
                0.0
            };
            0.5 * (h[k * n + l] + h[l * n + k]) / (s[k] * s[l]) + prior
        }))
    }
}

/// Multi-start minimization of `Ĵ`: from the prior mean and `n_starts`
/// prior draws (clamped to the lower bounds). The lowest local minimum is
/// returned with the inverse exact Hessian as covariance.
pub fn surrogate_map(
    post: &SurrogatePosterior<'_>,
    n_starts: usize,
    seed: u64,
    m_true: Option<&[f64]>,
    opts: &optimizer::Options,
) -> Result<PosteriorSummary> {
    let prior = post.prior;
    let mut rng = NormalStream::new(seed);
    let sd = prior.std_devs();
    let mut starts = vec![prior.mean.clone()];
    for _ in 0..n_starts {
        let mut m: Vec<f64> = prior
            .mean
            .iter()
            .zip(&sd)
            .map(|(mu, s)| mu + s * rng.normal())
            .collect();
        if let Some(lower) = &opts.lower {
            m.iter_mut().zip(lower).for_each(|(x, l)| *x = x.max(*l));
        }
        starts.push(m);
    }
    let mut best: Option<OptimizeResult> = None;
    let mut evaluations = 0;
    for m0 in &starts {
        let run = optimizer::minimize(|m| post.value_and_gradient(m), m0, opts)?;
        evaluations += run.evaluations;
        let better = match &best {
            None => true,
            Some(b) => (run.converged(), -run.value) > (b.converged(), -b.value),
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.expect("at least the prior mean is tried");
    let cov = covariance_from_hessian(&post.hessian(&best.x)?)?;
    let stats = SolverStats {
        iterations: best.iterations,
        evaluations,
        forward_solves: post.surrogate.forward_solves,
        adjoint_solves: 0,
        converged: best.converged(),
        grad_norm: best.grad_norm,
    };
    PosteriorSummary::new(best.x, &cov, m_true, stats)
}
