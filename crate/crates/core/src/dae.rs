//! Semi-explicit DAE interface `M u' = F(u; m, mode)`.
//!
//! `M` is diagonal with ones on the differential rows and zeros on the
//! algebraic rows. Time enters `F` only through a piecewise-constant
//! [`Schedule`] of operating modes (for the grid model: the active load at
//! every bus), which is what lets the integrator restart cleanly at switch
//! times.

use alloc::vec::Vec;
use nalgebra::DMatrix;

pub trait Dae {
    /// Piecewise-constant exogenous input.
    type Mode: Clone + PartialEq;

    fn dim(&self) -> usize;

    fn n_params(&self) -> usize;

    /// `true` when row/variable `i` carries a unit mass entry.
    fn is_differential(&self, i: usize) -> bool;

    fn rhs(&self, u: &[f64], m: &[f64], mode: &Self::Mode, out: &mut [f64]);

    /// `dF/du`, `dim x dim`.
    fn jac_u(&self, u: &[f64], m: &[f64], mode: &Self::Mode) -> DMatrix<f64>;

    /// `dF/dm`, `dim x n_params`.
    fn jac_m(&self, u: &[f64], m: &[f64], mode: &Self::Mode) -> DMatrix<f64>;
}

/// Maps simulation time to the active mode. Modes are right-continuous: the
/// mode at a switch time is the one that holds immediately after it.
pub trait Schedule<M> {
    fn mode_at(&self, t: f64) -> M;

    /// Times at which the mode may change, in increasing order.
    fn switch_times(&self) -> Vec<f64>;
}

/// A schedule with a single, constant mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Constant<M>(pub M);

impl<M: Clone> Schedule<M> for Constant<M> {
    fn mode_at(&self, _t: f64) -> M {
        self.0.clone()
    }

    fn switch_times(&self) -> Vec<f64> {
        Vec::new()
    }
}
