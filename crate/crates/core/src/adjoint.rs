//! Discrete adjoint of the trapezoidal scheme.
//!
//! The objective is `J(m) = Σ_k r_k(u_k) + prior(m)` where `u_k` are the
//! stored states. Every forward step solves
//!
//! ```text
//! R(v, u_k, m) = M (v - u_k) - dt/2 (F(u_k) + F(v)) = 0
//! ```
//!
//! for `v`; without a restart `u_{k+1} = v`, otherwise the algebraic part is
//! re-solved for the new mode. Going backward with `λ_N = ∇r_N(u_N)`:
//!
//! ```text
//! ν      = restart-transpose(λ_{k+1})            (identity without restart)
//! A^T λ* = ν,          A = M - dt/2 F_u(v)
//! λ_k    = ∇r_k(u_k) + (M + dt/2 F_u(u_k))^T λ*
//! μ     += dt/2 (F_m(u_k) + F_m(v))^T λ*
//! ```
//!
//! and `∇J = μ + Γpr⁻¹ (m − mpr)`. The prior enters with a plus sign, which
//! is what makes the total agree with finite differences of `J`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::bayes::GaussianPrior;
use crate::dae::{Dae, Schedule};
use crate::error::{Error, Result};
use crate::integrator::{iteration_matrix, Trajectory};
use crate::model::PowerSystem;
use crate::observation::{observe, voltage_components_jac, NoiseModel, ObservationSet};
use crate::scenario::ForwardModel;

/// Data misfit and its gradient with respect to the stored states.
#[derive(Debug, Clone, PartialEq)]
pub struct Misfit {
    pub value: f64,
    /// `(grid index, ∂r/∂u_k)` for every observed step, in increasing order.
    pub state_gradients: Vec<(usize, Vec<f64>)>,
}

/// `½ Σ (f_i − d_i)² / σ_i²`.
pub fn misfit_value(f: &[f64], d: &[f64], noise: &NoiseModel) -> f64 {
    0.5 * f
        .iter()
        .zip(d)
        .zip(&noise.variances)
        .map(|((f, d), v)| (f - d) * (f - d) / v)
        .sum::<f64>()
}

pub fn misfit_and_state_gradient(
    sys: &PowerSystem,
    traj: &Trajectory,
    obs: &ObservationSet,
    noise: &NoiseModel,
) -> Result<Misfit> {
    let layout = &obs.layout;
    if noise.len() != layout.len() {
        return Err(Error::Dimension {
            what: "noise model",
            expected: layout.len(),
            got: noise.len(),
        });
    }
    let f = observe(sys, traj, layout)?;
    let value = misfit_value(&f, &obs.data, noise);
    let n = traj.states[0].len();
    let mut state_gradients = Vec::with_capacity(layout.steps.len());
    for (j, &k) in layout.steps.iter().enumerate() {
        let u = &traj.states[k];
        let mut g = vec![0.0; n];
        for (b, &bus) in layout.buses.iter().enumerate() {
            let o = layout.offset(j, b);
            let vo = sys.voltage_offset(bus);
            let jac = voltage_components_jac(u[vo], u[vo + 1], layout.coordinates);
            for c in 0..2 {
                let w = (f[o + c] - obs.data[o + c]) / noise.variances[o + c];
                g[vo] += w * jac[c][0];
                g[vo + 1] += w * jac[c][1];
            }
        }
        state_gradients.push((k, g));
    }
    Ok(Misfit {
        value,
        state_gradients,
    })
}

fn solve_transposed(a: DMatrix<f64>, rhs: DVector<f64>, step: usize) -> Result<DVector<f64>> {
    let sol = a
        .transpose()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularAdjoint(step))?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularAdjoint(step));
    }
    Ok(sol)
}

/// Pulls `lam` (gradient with respect to the post-restart state `post`) back
/// to the pre-restart state, adding the parameter part into `mu`.
fn restart_transpose<D: Dae>(
    sys: &D,
    post: &[f64],
    m: &[f64],
    mode: &D::Mode,
    lam: &mut DVector<f64>,
    mu: &mut DVector<f64>,
    step: usize,
) -> Result<()> {
    let n = sys.dim();
    let alg: Vec<usize> = (0..n).filter(|&i| !sys.is_differential(i)).collect();
    let ju = sys.jac_u(post, m, mode);
    let jm = sys.jac_m(post, m, mode);
    let gy = DMatrix::from_fn(alg.len(), alg.len(), |r, c| ju[(alg[r], alg[c])]);
    let lam_y = DVector::from_iterator(alg.len(), alg.iter().map(|&i| lam[i]));
    let z = solve_transposed(gy, lam_y, step)?;
    // lam_x -= g_x^T z, mu -= g_m^T z, lam_y = 0
    for i in (0..n).filter(|&i| sys.is_differential(i)) {
        lam[i] -= alg
            .iter()
            .enumerate()
            .map(|(r, &a)| ju[(a, i)] * z[r])
            .sum::<f64>();
    }
    for p in 0..mu.len() {
        mu[p] -= alg
            .iter()
            .enumerate()
            .map(|(r, &a)| jm[(a, p)] * z[r])
            .sum::<f64>();
    }
    for &i in &alg {
        lam[i] = 0.0;
    }
    Ok(())
}

/// Gradient with respect to `m` of `Σ_k r_k(u_k)`, given the state gradients
/// `∂r_k/∂u_k` on the stored trajectory.
pub fn sweep<D: Dae, S: Schedule<D::Mode>>(
    sys: &D,
    traj: &Trajectory,
    m: &[f64],
    schedule: &S,
    state_gradients: &[(usize, Vec<f64>)],
) -> Result<Vec<f64>> {
    let n = sys.dim();
    let n_steps = traj.steps();
    let dt = traj.dt;
    let mut r_u: Vec<Option<&Vec<f64>>> = vec![None; n_steps + 1];
    for (k, g) in state_gradients {
        if *k > n_steps || g.len() != n {
            return Err(Error::Dimension {
                what: "state gradient",
                expected: n,
                got: g.len(),
            });
        }
        r_u[*k] = Some(g);
    }
    let add = |lam: &mut DVector<f64>, k: usize| {
        if let Some(g) = r_u[k] {
            for (l, gi) in lam.iter_mut().zip(g.iter()) {
                *l += gi;
            }
        }
    };

    let mut lam = DVector::zeros(n);
    let mut mu = DVector::zeros(sys.n_params());
    add(&mut lam, n_steps);
    for k in (0..n_steps).rev() {
        let restart = traj.restart_at(k + 1);
        let v = match restart {
            Some(r) => {
                let mode = schedule.mode_at(traj.times[k + 1]);
                restart_transpose(sys, &traj.states[k + 1], m, &mode, &mut lam, &mut mu, k + 1)?;
                &r.pre_state
            }
            None => &traj.states[k + 1],
        };
        let u = &traj.states[k];
        let mode = schedule.mode_at(traj.times[k]);
        let a = iteration_matrix(sys, v, dt, m, &mode);
        let lam_star = solve_transposed(a, lam, k + 1)?;

        // λ_k = ∇r_k + (M + dt/2 F_u(u_k))^T λ*
        let mut next = sys.jac_u(u, m, &mode).tr_mul(&lam_star) * (0.5 * dt);
        for i in (0..n).filter(|&i| sys.is_differential(i)) {
            next[i] += lam_star[i];
        }
        let fm = sys.jac_m(u, m, &mode) + sys.jac_m(v, m, &mode);
        mu += fm.tr_mul(&lam_star) * (0.5 * dt);
        lam = next;
        add(&mut lam, k);
    }
    if traj.restart_at(0).is_some() {
        let mode = schedule.mode_at(0.0);
        restart_transpose(sys, &traj.states[0], m, &mode, &mut lam, &mut mu, 0)?;
    }
    Ok(mu.iter().copied().collect())
}

/// `∇J` for the negative log posterior on a trajectory already computed at `m`.
pub fn backward_sweep(
    fwd: &ForwardModel,
    traj: &Trajectory,
    m: &[f64],
    obs: &ObservationSet,
    noise: &NoiseModel,
    prior: &GaussianPrior,
) -> Result<Vec<f64>> {
    let misfit = misfit_and_state_gradient(&fwd.system, traj, obs, noise)?;
    let mut g = sweep(&fwd.system, traj, m, &fwd.schedule, &misfit.state_gradients)?;
    for (gi, pi) in g.iter_mut().zip(prior.gradient(m)) {
        *gi += pi;
    }
    Ok(g)
}

/// `J(m)` and `∇J(m)`: one forward simulation and one backward sweep.
pub fn objective_and_gradient(
    fwd: &ForwardModel,
    m: &[f64],
    obs: &ObservationSet,
    noise: &NoiseModel,
    prior: &GaussianPrior,
) -> Result<(f64, Vec<f64>)> {
    let traj = fwd.simulate(m)?;
    let misfit = misfit_and_state_gradient(&fwd.system, &traj, obs, noise)?;
    let mut g = sweep(
        &fwd.system,
        &traj,
        m,
        &fwd.schedule,
        &misfit.state_gradients,
    )?;
    for (gi, pi) in g.iter_mut().zip(prior.gradient(m)) {
        *gi += pi;
    }
    Ok((misfit.value + prior.value(m), g))
}

/// `J(m)` alone: one forward simulation.
pub fn objective(
    fwd: &ForwardModel,
    m: &[f64],
    obs: &ObservationSet,
    noise: &NoiseModel,
    prior: &GaussianPrior,
) -> Result<f64> {
    let f = fwd.observe(m)?;
    if noise.len() != f.len() || obs.data.len() != f.len() {
        return Err(Error::Dimension {
            what: "observation data",
            expected: f.len(),
            got: obs.data.len(),
        });
    }
    Ok(misfit_value(&f, &obs.data, noise) + prior.value(m))
}
