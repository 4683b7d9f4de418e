//! Posterior assembly, MAP point, Laplace covariance and accuracy metrics.
//!
//! `J(m) = ½‖f(m) − d‖²_{Γn⁻¹} + ½‖m − mpr‖²_{Γpr⁻¹}` is the negative log
//! posterior with constants dropped. The Laplace approximation is
//! `N(m_MAP, H⁻¹)` with `H` the finite-difference Hessian of `J`.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::adjoint;
use crate::error::{Error, Result};
use crate::math::{normal_cdf, sqrt};
use crate::observation::{NoiseModel, ObservationSet};
use crate::optimizer::{self, OptimizeResult};
use crate::scenario::ForwardModel;

/// Lower bound on every inertia during estimation.
pub const MIN_INERTIA: f64 = 0.1;

/// Relative finite-difference step for the Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;

/// Independent Gaussian prior `N(mean, diag(variances))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::Dimension {
                what: "prior variances",
                expected: mean.len(),
                got: variances.len(),
            });
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite())
            || mean.iter().any(|x| !x.is_finite())
        {
            return Err(Error::Invalid(format!(
                "prior needs finite mean and positive variances, got {variances:?}"
            )));
        }
        Ok(Self { mean, variances })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.variances.iter().map(|v| sqrt(*v)).collect()
    }

    /// `½‖m − mean‖²` weighted by the inverse prior covariance.
    pub fn value(&self, m: &[f64]) -> f64 {
        0.5 * m
            .iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((x, mu), v)| (x - mu) * (x - mu) / v)
            .sum::<f64>()
    }

    /// Gradient of [`value`](Self::value): `Γpr⁻¹ (m − mean)`.
    pub fn gradient(&self, m: &[f64]) -> Vec<f64> {
        m.iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((x, mu), v)| (x - mu) / v)
            .collect()
    }
}

/// Forward and adjoint solve counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounts {
    pub forward: usize,
    pub adjoint: usize,
}

impl SolveCounts {
    pub fn total(&self) -> usize {
        self.forward + self.adjoint
    }
}

/// Everything needed to evaluate `J`: forward model, data, noise and prior.
/// Counts solves; safe to share between threads.
#[derive(Debug)]
pub struct InverseProblem<'a> {
    pub forward: &'a ForwardModel,
    pub obs: &'a ObservationSet,
    pub noise: &'a NoiseModel,
    pub prior: &'a GaussianPrior,
    forward_solves: AtomicUsize,
    adjoint_solves: AtomicUsize,
}

impl<'a> InverseProblem<'a> {
    pub fn new(
        forward: &'a ForwardModel,
        obs: &'a ObservationSet,
        noise: &'a NoiseModel,
        prior: &'a GaussianPrior,
    ) -> Result<Self> {
        let q = forward.layout.len();
        if obs.layout != forward.layout {
            return Err(Error::Invalid(
                "observation layout does not match the scenario".into(),
            ));
        }
        if noise.len() != q {
            return Err(Error::Dimension {
                what: "noise model",
                expected: q,
                got: noise.len(),
            });
        }
        if prior.dim() != forward.n_params() {
            return Err(Error::Dimension {
                what: "prior",
                expected: forward.n_params(),
                got: prior.dim(),
            });
        }
        Ok(Self {
            forward,
            obs,
            noise,
            prior,
            forward_solves: AtomicUsize::new(0),
            adjoint_solves: AtomicUsize::new(0),
        })
    }

    pub fn n_params(&self) -> usize {
        self.prior.dim()
    }

    fn failed(m: &[f64], e: Error) -> Error {
        match e {
            e @ (Error::Dimension { .. } | Error::ForwardFailed { .. }) => e,
            e => Error::ForwardFailed {
                m: m.to_vec(),
                reason: e.to_string(),
            },
        }
    }

    /// `J(m)`: one forward solve.
    pub fn value(&self, m: &[f64]) -> Result<f64> {
        self.forward_solves.fetch_add(1, Ordering::Relaxed);
        adjoint::objective(self.forward, m, self.obs, self.noise, self.prior)
            .map_err(|e| Self::failed(m, e))
    }

    /// `J(m)` and `∇J(m)`: one forward and one adjoint solve.
    pub fn value_and_gradient(&self, m: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.forward_solves.fetch_add(1, Ordering::Relaxed);
        let traj = self.forward.simulate(m).map_err(|e| Self::failed(m, e))?;
        self.adjoint_solves.fetch_add(1, Ordering::Relaxed);
        let misfit =
            adjoint::misfit_and_state_gradient(&self.forward.system, &traj, self.obs, self.noise)?;
        let mut g = adjoint::sweep(
            &self.forward.system,
            &traj,
            m,
            &self.forward.schedule,
            &misfit.state_gradients,
        )?;
        for (gi, pi) in g.iter_mut().zip(self.prior.gradient(m)) {
            *gi += pi;
        }
        Ok((misfit.value + self.prior.value(m), g))
    }

    pub fn solves(&self) -> SolveCounts {
        SolveCounts {
            forward: self.forward_solves.load(Ordering::Relaxed),
            adjoint: self.adjoint_solves.load(Ordering::Relaxed),
        }
    }
}

/// `(J, ∇J)` at `m`.
pub fn neg_log_posterior(problem: &InverseProblem<'_>, m: &[f64]) -> Result<(f64, Vec<f64>)> {
    problem.value_and_gradient(m)
}

/// Optimizer settings for the MAP search: inertias bounded below by
/// [`MIN_INERTIA`], quasi-Newton metric started from the prior covariance.
pub fn map_options(prior: &GaussianPrior) -> optimizer::Options {
    optimizer::Options {
        lower: Some(alloc::vec![MIN_INERTIA; prior.dim()]),
        h0: Some(prior.variances.clone()),
        ..optimizer::Options::default()
    }
}

/// Minimizes `J` from `m0` with the adjoint gradient.
pub fn map_estimate(
    problem: &InverseProblem<'_>,
    m0: &[f64],
    opts: &optimizer::Options,
) -> Result<OptimizeResult> {
    optimizer::minimize(|m| problem.value_and_gradient(m), m0, opts)
}

/// Points at which the gradient is needed for the Hessian at `m`:
/// `m + h_j e_j` then `m − h_j e_j` for every `j`.
pub fn hessian_points(m: &[f64]) -> Vec<Vec<f64>> {
    let mut pts = Vec::with_capacity(2 * m.len());
    for j in 0..m.len() {
        let h = hessian_step(m[j]);
        for sign in [1.0, -1.0] {
            let mut p = m.to_vec();
            p[j] += sign * h;
            pts.push(p);
        }
    }
    pts
}

fn hessian_step(x: f64) -> f64 {
    HESSIAN_STEP * x.abs().max(1e-8)
}

/// Symmetrized central-difference Hessian from gradients at [`hessian_points`].
pub fn hessian_from_gradients(m: &[f64], grads: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = m.len();
    if grads.len() != 2 * n || grads.iter().any(|g| g.len() != n) {
        return Err(Error::Dimension {
            what: "finite-difference gradients",
            expected: 2 * n,
            got: grads.len(),
        });
    }
    let h = DMatrix::from_fn(n, n, |i, j| {
        (grads[2 * j][i] - grads[2 * j + 1][i]) / (2.0 * hessian_step(m[j]))
    });
    let asym = (&h - h.transpose()).abs().max();
    let scale = h.abs().max();
    if !(scale > 0.0) || !scale.is_finite() || asym > 1e-3 * scale {
        return Err(Error::Invalid(format!(
            "finite-difference Hessian is not symmetric ({asym:e} vs {scale:e})"
        )));
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// `H⁻¹` after checking positive definiteness.
pub fn covariance_from_hessian(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match h.clone().cholesky() {
        Some(chol) => {
            let cov = chol.inverse();
            Ok((&cov + cov.transpose()) * 0.5)
        }
        None => {
            let eig = h.clone().symmetric_eigenvalues();
            Err(Error::NotPositiveDefinite(eig.iter().copied().collect()))
        }
    }
}

/// Laplace covariance at `m` with sequential gradient evaluations.
pub fn laplace_covariance<G>(m: &[f64], mut gradient: G) -> Result<DMatrix<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let grads = hessian_points(m)
        .iter()
        .map(|p| gradient(p))
        .collect::<Result<Vec<_>>>()?;
    covariance_from_hessian(&hessian_from_gradients(m, &grads)?)
}

/// Accuracy metrics against a known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Root-mean-square relative error of the MAP point.
    pub err: f64,
    /// Square root of the truth-normalized trace of the covariance.
    pub tau: f64,
    /// Cumulative normal scores `Φ((m_i − m_true,i) / σ_i)`.
    pub cns: Vec<f64>,
}

pub fn metrics(m_map: &[f64], cov: &DMatrix<f64>, m_true: &[f64]) -> Result<Metrics> {
    let n = m_true.len();
    if m_map.len() != n {
        return Err(Error::Dimension {
            what: "MAP point",
            expected: n,
            got: m_map.len(),
        });
    }
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::Dimension {
            what: "covariance",
            expected: n,
            got: cov.nrows(),
        });
    }
    if (0..n).any(|i| !(cov[(i, i)] > 0.0)) || m_true.contains(&0.0) {
        return Err(Error::Invalid(
            "metrics need positive variances and non-zero truth".into(),
        ));
    }
    let err = sqrt(
        m_map
            .iter()
            .zip(m_true)
            .map(|(m, t)| (m - t) * (m - t) / (t * t))
            .sum::<f64>()
            / n as f64,
    );
    let tau = sqrt(
        (0..n)
            .map(|i| cov[(i, i)] / (m_true[i] * m_true[i]))
            .sum::<f64>(),
    );
    let cns = (0..n)
        .map(|i| normal_cdf((m_map[i] - m_true[i]) / sqrt(cov[(i, i)])))
        .collect();
    Ok(Metrics { err, tau, cns })
}

/// Cost of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub evaluations: usize,
    pub forward_solves: usize,
    pub adjoint_solves: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

/// MAP point, Laplace covariance and (when the truth is known) metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub map: Vec<f64>,
    /// Row-major covariance.
    pub covariance: Vec<Vec<f64>>,
    pub std_devs: Vec<f64>,
    pub metrics: Option<Metrics>,
    pub stats: SolverStats,
}

impl PosteriorSummary {
    pub fn new(
        map: Vec<f64>,
        cov: &DMatrix<f64>,
        m_true: Option<&[f64]>,
        stats: SolverStats,
    ) -> Result<Self> {
        let metrics = m_true.map(|t| metrics(&map, cov, t)).transpose()?;
        Ok(Self {
            covariance: cov
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            std_devs: (0..cov.nrows()).map(|i| sqrt(cov[(i, i)])).collect(),
            map,
            metrics,
            stats,
        })
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.covariance.len();
        DMatrix::from_fn(n, n, |i, j| self.covariance[i][j])
    }

    pub fn trace(&self) -> f64 {
        (0..self.covariance.len())
            .map(|i| self.covariance[i][i])
            .sum()
    }
}

/// Full adjoint pipeline: MAP from `m0`, sequential FD Hessian, summary.
pub fn estimate(
    problem: &InverseProblem<'_>,
    m0: &[f64],
    m_true: Option<&[f64]>,
    opts: &optimizer::Options,
) -> Result<PosteriorSummary> {
    let opt = map_estimate(problem, m0, opts)?;
    let cov = laplace_covariance(&opt.x, |p| problem.value_and_gradient(p).map(|(_, g)| g))?;
    let solves = problem.solves();
    let stats = SolverStats {
        iterations: opt.iterations,
        evaluations: opt.evaluations,
        forward_solves: solves.forward,
        adjoint_solves: solves.adjoint,
        converged: opt.converged(),
        grad_norm: opt.grad_norm,
    };
    PosteriorSummary::new(opt.x, &cov, m_true, stats)
}
