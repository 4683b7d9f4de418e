use alloc::vec;
use nalgebra::DMatrix;

use crate::dae::{Dae, Schedule};
use crate::model::SystemData;

pub const M_TRUE: [f64; 3] = [23.64, 6.40, 3.01];

pub fn wscc9() -> SystemData {
    toml::from_str(crate::WSCC9_DATA).expect("bundled data parses")
}

/// Central differences of `F` in `u` (or in `m` when `wrt_m`).
pub fn fd_jacobian<D: Dae, S: Schedule<D::Mode>>(
    sys: &D,
    u: &[f64],
    m: &[f64],
    sched: &S,
    wrt_m: bool,
) -> DMatrix<f64> {
    let mode = sched.mode_at(0.0);
    let n = sys.dim();
    let cols = if wrt_m { sys.n_params() } else { n };
    let mut jac = DMatrix::zeros(n, cols);
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    for c in 0..cols {
        let (mut up, mut um) = (u.to_vec(), u.to_vec());
        let (mut mp, mut mm) = (m.to_vec(), m.to_vec());
        let base = if wrt_m { m[c] } else { u[c] };
        let h = 1e-6 * base.abs().max(1.0);
        if wrt_m {
            mp[c] += h;
            mm[c] -= h;
        } else {
            up[c] += h;
            um[c] -= h;
        }
        sys.rhs(&up, &mp, &mode, &mut fp);
        sys.rhs(&um, &mm, &mode, &mut fm);
        for r in 0..n {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}
