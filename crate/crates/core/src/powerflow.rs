//! Newton-Raphson AC power flow in polar coordinates, used to find the
//! initial operating point.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{cos, norm_inf, sin};
use crate::model::{BusKind, SystemData};

const TOL: f64 = 1e-13;
const MAX_ITER: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Net injected active power per bus (generation minus demand).
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub iterations: usize,
}

fn injections(g: &DMatrix<f64>, b: &DMatrix<f64>, vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = vm.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let th = va[i] - va[j];
            let (s, c) = (sin(th), cos(th));
            p[i] += vm[i] * vm[j] * (g[(i, j)] * c + b[(i, j)] * s);
            q[i] += vm[i] * vm[j] * (g[(i, j)] * s - b[(i, j)] * c);
        }
    }
    (p, q)
}

pub fn solve(data: &SystemData) -> Result<PowerFlowSolution> {
    let (g, b) = data.admittance();
    let n = data.buses.len();
    let mut vm: Vec<f64> = data
        .buses
        .iter()
        .map(|bus| if bus.kind == BusKind::Pq { 1.0 } else { bus.v })
        .collect();
    let mut va = vec![0.0; n];
    let p_spec: Vec<f64> = data.buses.iter().map(|b| b.p_gen - b.p_load).collect();
    let q_spec: Vec<f64> = data.buses.iter().map(|b| -b.q_load).collect();

    // Unknowns: angles of non-slack buses, then magnitudes of PQ buses.
    let ang: Vec<usize> = (0..n)
        .filter(|&i| data.buses[i].kind != BusKind::Slack)
        .collect();
    let mag: Vec<usize> = (0..n)
        .filter(|&i| data.buses[i].kind == BusKind::Pq)
        .collect();
    let dim = ang.len() + mag.len();

    let mut mismatch = f64::INFINITY;
    for iter in 0..=MAX_ITER {
        let (p, q) = injections(&g, &b, &vm, &va);
        let mut f = DVector::zeros(dim);
        for (r, &i) in ang.iter().enumerate() {
            f[r] = p[i] - p_spec[i];
        }
        for (r, &i) in mag.iter().enumerate() {
            f[ang.len() + r] = q[i] - q_spec[i];
        }
        mismatch = norm_inf(f.as_slice());
        if mismatch <= TOL {
            return Ok(PowerFlowSolution {
                vm,
                va,
                p_inj: p,
                q_inj: q,
                iterations: iter,
            });
        }
        if iter == MAX_ITER || !mismatch.is_finite() {
            break;
        }

        let mut jac = DMatrix::zeros(dim, dim);
        for (r, &i) in ang.iter().enumerate() {
            for (c, &j) in ang.iter().enumerate() {
                jac[(r, c)] = if i == j {
                    -q[i] - b[(i, i)] * vm[i] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    vm[i] * vm[j] * (g[(i, j)] * sin(th) - b[(i, j)] * cos(th))
                };
            }
            for (c, &j) in mag.iter().enumerate() {
                jac[(r, ang.len() + c)] = if i == j {
                    p[i] / vm[i] + g[(i, i)] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    vm[i] * (g[(i, j)] * cos(th) + b[(i, j)] * sin(th))
                };
            }
        }
        for (r, &i) in mag.iter().enumerate() {
            let row = ang.len() + r;
            for (c, &j) in ang.iter().enumerate() {
                jac[(row, c)] = if i == j {
                    p[i] - g[(i, i)] * vm[i] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    -vm[i] * vm[j] * (g[(i, j)] * cos(th) + b[(i, j)] * sin(th))
                };
            }
            for (c, &j) in mag.iter().enumerate() {
                jac[(row, ang.len() + c)] = if i == j {
                    q[i] / vm[i] - b[(i, i)] * vm[i]
                } else {
                    let th = va[i] - va[j];
                    vm[i] * (g[(i, j)] * sin(th) - b[(i, j)] * cos(th))
                };
            }
        }
        let dx = jac.lu().solve(&f).ok_or(Error::PowerFlowDiverged {
            iterations: iter,
            mismatch,
        })?;
        for (r, &i) in ang.iter().enumerate() {
            va[i] -= dx[r];
        }
        for (r, &i) in mag.iter().enumerate() {
            vm[i] -= dx[ang.len() + r];
        }
    }
    Err(Error::PowerFlowDiverged {
        iterations: MAX_ITER,
        mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::wscc9;

    #[test]
    fn wscc9_matches_textbook_operating_point() {
        let pf = solve(&wscc9()).unwrap();
        assert!(pf.iterations < 10);
        // Slack generation and well-known bus voltages of the WSCC case.
        assert!((pf.p_inj[0] - 0.716).abs() < 2e-3, "P1 = {}", pf.p_inj[0]);
        assert!((pf.q_inj[0] - 0.270).abs() < 2e-3, "Q1 = {}", pf.q_inj[0]);
        assert!((pf.vm[4] - 0.996).abs() < 2e-3, "V5 = {}", pf.vm[4]);
        assert!((pf.vm[7] - 1.016).abs() < 2e-3, "V8 = {}", pf.vm[7]);
    }

    #[test]
    fn diverges_on_impossible_loading() {
        let mut data = wscc9();
        data.buses[4].p_load = 60.0;
        assert!(matches!(solve(&data), Err(Error::PowerFlowDiverged { .. })));
    }
}
