//! Implicit trapezoidal time stepping for `M u' = F(u; m, mode)`.
//!
//! One step solves
//!
//! ```text
//! M u_{k+1} = M u_k + dt/2 (F(u_k) + F(u_{k+1}))
//! ```
//!
//! by Newton's method on the dense iteration matrix `M - dt/2 F_u`, with
//! both `F` evaluations using the mode active on `[t_k, t_{k+1})`. When the
//! mode switches at `t_{k+1}` the algebraic variables are re-solved for the
//! new mode with the differential states frozen; the state before that
//! restart is kept so the adjoint can differentiate through it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dae::{Dae, Schedule};
use crate::error::{Error, Result};
use crate::math::{grid_index, norm_inf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on the infinity norm of the step residual.
    /// Residuals up to `100 * tol` are also accepted once an update stops
    /// reducing them (the rounding floor).
    pub tol: f64,
    pub max_iter: usize,
}

impl NewtonOptions {
    fn done(&self, norm: f64, prev: f64) -> bool {
        norm <= self.tol || (norm <= 100.0 * self.tol && norm >= 0.5 * prev)
    }
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 25,
        }
    }
}

/// State right before an algebraic restart at grid index `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Restart {
    pub index: usize,
    pub pre_state: Vec<f64>,
}

/// Full forward solution on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub dt: f64,
    pub restarts: Vec<Restart>,
    pub newton_iterations: usize,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Grid index of `t`, if `t` is a grid point within the horizon.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        grid_index(t, self.dt).filter(|&k| k < self.times.len())
    }

    pub fn restart_at(&self, k: usize) -> Option<&Restart> {
        self.restarts.iter().find(|r| r.index == k)
    }
}

/// Residual of one trapezoidal step, given `f_k = F(u_k)`.
fn step_residual<D: Dae>(
    sys: &D,
    u_k: &[f64],
    f_k: &[f64],
    v: &[f64],
    dt: f64,
    m: &[f64],
    mode: &D::Mode,
    out: &mut [f64],
) {
    sys.rhs(v, m, mode, out);
    for i in 0..out.len() {
        let mass = if sys.is_differential(i) {
            v[i] - u_k[i]
        } else {
            0.0
        };
        out[i] = mass - 0.5 * dt * (f_k[i] + out[i]);
    }
}

/// `M - dt/2 F_u(u)`.
pub fn iteration_matrix<D: Dae>(
    sys: &D,
    u: &[f64],
    dt: f64,
    m: &[f64],
    mode: &D::Mode,
) -> DMatrix<f64> {
    let mut a = sys.jac_u(u, m, mode) * (-0.5 * dt);
    for i in 0..sys.dim() {
        if sys.is_differential(i) {
            a[(i, i)] += 1.0;
        }
    }
    a
}

/// Advances `u_k` by one trapezoidal step. Returns the new state and the
/// number of Newton iterations used.
pub fn step_trapezoidal<D: Dae>(
    sys: &D,
    u_k: &[f64],
    t_k: f64,
    dt: f64,
    m: &[f64],
    mode: &D::Mode,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, usize)> {
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!(
            "step size must be positive, got {dt}"
        )));
    }
    if u_k.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("state"));
    }
    let n = sys.dim();
    let mut f_k = vec![0.0; n];
    sys.rhs(u_k, m, mode, &mut f_k);
    let mut v = u_k.to_vec();
    let mut res = vec![0.0; n];
    step_residual(sys, u_k, &f_k, &v, dt, m, mode, &mut res);
    let mut norm = norm_inf(&res);
    let mut prev = f64::INFINITY;
    let mut iter = 0;
    let mut lu = None;
    while !opts.done(norm, prev) {
        if iter == opts.max_iter || !norm.is_finite() {
            return Err(Error::StepFailed {
                time: t_k + dt,
                iterations: iter,
                residual: norm,
            });
        }
        let fact = iteration_matrix(sys, &v, dt, m, mode).lu();
        let dx = fact
            .solve(&DVector::from_column_slice(&res))
            .ok_or(Error::StepFailed {
                time: t_k + dt,
                iterations: iter,
                residual: norm,
            })?;
        for (vi, di) in v.iter_mut().zip(dx.iter()) {
            *vi -= di;
        }
        lu = Some(fact);
        step_residual(sys, u_k, &f_k, &v, dt, m, mode, &mut res);
        prev = norm;
        norm = norm_inf(&res);
        iter += 1;
    }
    // One more correction with the last factorization takes the converged
    // state to rounding level, so it depends smoothly on `m`.
    if let Some(dx) = lu.and_then(|f| f.solve(&DVector::from_column_slice(&res))) {
        for (vi, di) in v.iter_mut().zip(dx.iter()) {
            *vi -= di;
        }
    }
    Ok((v, iter))
}

/// Re-solves the algebraic variables of `u` for `mode`, keeping the
/// differential states fixed.
pub fn consistent_algebraic<D: Dae>(
    sys: &D,
    u: &[f64],
    t: f64,
    m: &[f64],
    mode: &D::Mode,
    opts: &NewtonOptions,
) -> Result<Vec<f64>> {
    let n = sys.dim();
    let alg: Vec<usize> = (0..n).filter(|&i| !sys.is_differential(i)).collect();
    let mut v = u.to_vec();
    let mut f = vec![0.0; n];
    let mut prev = f64::INFINITY;
    let mut lu = None;
    for iter in 0..=opts.max_iter {
        sys.rhs(&v, m, mode, &mut f);
        let g = DVector::from_iterator(alg.len(), alg.iter().map(|&i| f[i]));
        let norm = norm_inf(g.as_slice());
        if opts.done(norm, prev) {
            if let Some(dy) =
                lu.and_then(|f: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>| f.solve(&g))
            {
                for (r, &i) in alg.iter().enumerate() {
                    v[i] -= dy[r];
                }
            }
            return Ok(v);
        }
        prev = norm;
        if iter == opts.max_iter || !norm.is_finite() {
            return Err(Error::StepFailed {
                time: t,
                iterations: iter,
                residual: norm,
            });
        }
        let jac = sys.jac_u(&v, m, mode);
        let gy = DMatrix::from_fn(alg.len(), alg.len(), |r, c| jac[(alg[r], alg[c])]);
        let fact = gy.lu();
        let dy = fact.solve(&g).ok_or(Error::StepFailed {
            time: t,
            iterations: iter,
            residual: norm,
        })?;
        for (r, &i) in alg.iter().enumerate() {
            v[i] -= dy[r];
        }
        lu = Some(fact);
    }
    unreachable!()
}

/// Number of uniform steps covering `[0, t_final]`.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final > 0.0) || !(dt > 0.0) {
        return Err(Error::Invalid(format!(
            "need t_final > 0 and dt > 0 (got {t_final}, {dt})"
        )));
    }
    grid_index(t_final, dt).filter(|&n| n > 0).ok_or_else(|| {
        Error::Invalid(format!(
            "t_final = {t_final} is not a multiple of dt = {dt}"
        ))
    })
}

/// Integrates from `u0` over `[0, t_final]` with uniform step `dt`.
///
/// Mode switches must fall on the grid; misaligned switches are rejected.
pub fn simulate<D: Dae, S: Schedule<D::Mode>>(
    sys: &D,
    u0: &[f64],
    m: &[f64],
    t_final: f64,
    dt: f64,
    schedule: &S,
    opts: &NewtonOptions,
) -> Result<Trajectory> {
    let n_steps = step_count(t_final, dt)?;
    if u0.len() != sys.dim() {
        return Err(Error::Dimension {
            what: "initial state",
            expected: sys.dim(),
            got: u0.len(),
        });
    }
    if m.len() != sys.n_params() {
        return Err(Error::Dimension {
            what: "parameter vector",
            expected: sys.n_params(),
            got: m.len(),
        });
    }
    let mut switch_steps = Vec::new();
    for time in schedule.switch_times() {
        let k = grid_index(time, dt).ok_or(Error::EventMisaligned { time, dt })?;
        if k <= n_steps {
            switch_steps.push(k);
        }
    }

    let mut traj = Trajectory {
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        dt,
        restarts: Vec::new(),
        newton_iterations: 0,
    };
    let mut u = u0.to_vec();
    if switch_steps.contains(&0) {
        let mode = schedule.mode_at(0.0);
        let post = consistent_algebraic(sys, &u, 0.0, m, &mode, opts)?;
        traj.restarts.push(Restart {
            index: 0,
            pre_state: u,
        });
        u = post;
    }
    traj.times.push(0.0);
    traj.states.push(u.clone());

    for k in 0..n_steps {
        let t_k = k as f64 * dt;
        let t_next = (k + 1) as f64 * dt;
        let mode = schedule.mode_at(t_k);
        let (mut next, iters) = step_trapezoidal(sys, &u, t_k, dt, m, &mode, opts)?;
        traj.newton_iterations += iters;
        if switch_steps.contains(&(k + 1)) {
            let new_mode = schedule.mode_at(t_next);
            if new_mode != mode {
                let post = consistent_algebraic(sys, &next, t_next, m, &new_mode, opts)?;
                traj.restarts.push(Restart {
                    index: k + 1,
                    pre_state: next,
                });
                next = post;
            }
        }
        traj.times.push(t_next);
        traj.states.push(next.clone());
        u = next;
    }
    Ok(traj)
}
