//! Bound-constrained L-BFGS with a strong-Wolfe line search.
//!
//! Lower bounds only. Trial steps are capped so iterates stay feasible, and
//! components that push against an active bound are removed from both the
//! gradient used for convergence and the search direction.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm_inf};

#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    /// Stop when the projected gradient's infinity norm falls to this value.
    pub gtol: f64,
    pub max_iter: usize,
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_evals: usize,
    pub lower: Option<Vec<f64>>,
    /// Diagonal initial inverse Hessian (a preconditioner). `None` is the
    /// identity.
    pub h0: Option<Vec<f64>>,
    /// Relative rounding level of the objective. Below it, sufficient
    /// decrease is judged from the directional derivative instead of values.
    pub f_noise: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            gtol: 1e-6,
            max_iter: 200,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 30,
            lower: None,
            h0: None,
            f_noise: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
    /// Objective evaluations so far.
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Infinity norm of the projected gradient at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
    /// Number of `(J, ∇J)` evaluations, including the starting point.
    pub evaluations: usize,
    pub skipped_updates: usize,
    pub termination: Termination,
    pub history: Vec<IterationRecord>,
}

impl OptimizeResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn at_bound(x: f64, lower: Option<f64>) -> bool {
    lower.is_some_and(|l| x <= l)
}

fn projected_gradient(x: &[f64], g: &[f64], lower: Option<&[f64]>) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            if gi > 0.0 && at_bound(xi, lower.map(|l| l[i])) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// `-H g` by the two-loop recursion.
fn direction(
    pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    g: &[f64],
    h0: Option<&[f64]>,
) -> Vec<f64> {
    let apply_h0 = |q: &mut [f64]| {
        if let Some(h) = h0 {
            q.iter_mut().zip(h).for_each(|(qi, hi)| *qi *= hi);
        }
    };
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; pairs.len()];
    for (j, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alpha[j] = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha[j] * yi;
        }
    }
    if let Some((s, y, _)) = pairs.back() {
        let s_norm: f64 = match h0 {
            Some(h) => s.iter().zip(h).map(|(si, hi)| si * si / hi).sum(),
            None => dot(s, s),
        };
        let gamma = s_norm / dot(s, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    apply_h0(&mut q);
    for (j, (s, y, rho)) in pairs.iter().enumerate() {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha[j] - beta) * si;
        }
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, kept
/// inside the middle 80% of the bracket.
fn cubic_step(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let guard = 0.1 * (hi - lo);
    let mut t = 0.5 * (a + b);
    if disc >= 0.0 {
        let d2 = crate::math::sqrt(disc) * if b > a { 1.0 } else { -1.0 };
        let c = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if c.is_finite() {
            t = c;
        }
    }
    t.clamp(lo + guard, hi - guard)
}

/// Root of the linear interpolant of the slope, for brackets whose values
/// agree to rounding. Same safeguard as [`cubic_step`].
fn secant_step(a: f64, da: f64, b: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let guard = 0.1 * (hi - lo);
    let c = a - da * (b - a) / (db - da);
    let t = if c.is_finite() { c } else { 0.5 * (a + b) };
    t.clamp(lo + guard, hi - guard)
}

/// Next trial beyond `b` while the slope is still negative: the cubic's
/// minimizer when it lies ahead, kept within `[2b, 20b]`.
fn extrapolate(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let mut t = 20.0 * b;
    if disc >= 0.0 && fa.is_finite() {
        let d2 = crate::math::sqrt(disc);
        let c = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if c.is_finite() && c > b {
            t = c;
        }
    }
    t.clamp(2.0 * b, 20.0 * b)
}

/// Zoom trials within rounding of the starting value before giving up.
const FLAT_TRIALS: usize = 4;

struct LineSearch<'a, F> {
    f: &'a mut F,
    evals: usize,
    max_evals: usize,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    df0: f64,
    c1: f64,
    c2: f64,
    /// Absolute rounding level of the objective near `f0`.
    eps: f64,
    x_scale: f64,
    d_scale: f64,
}

/// A trial point; failed objective evaluations count as `+inf`.
struct Trial {
    a: f64,
    point: Option<Point>,
    f: f64,
    df: f64,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> LineSearch<'_, F> {
    fn eval(&mut self, a: f64) -> Trial {
        self.evals += 1;
        let x: Vec<f64> = self
            .x
            .iter()
            .zip(self.d)
            .map(|(xi, di)| xi + a * di)
            .collect();
        match (self.f)(&x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let df = dot(&g, self.d);
                Trial {
                    a,
                    point: Some(Point { x, f, g }),
                    f,
                    df,
                }
            }
            _ => Trial {
                a,
                point: None,
                f: f64::INFINITY,
                df: f64::NAN,
            },
        }
    }

    /// Armijo, or its derivative form (Hager–Zhang approximate Wolfe) when
    /// the value change is below the rounding level.
    fn sufficient(&self, t: &Trial) -> bool {
        t.f <= self.f0 + self.c1 * t.a * self.df0
            || (t.f <= self.f0 + self.eps && t.df <= (2.0 * self.c1 - 1.0) * self.df0)
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.df.abs() <= -self.c2 * self.df0
    }

    /// Returns an accepted trial, or the best Armijo point when the budget
    /// runs out, or `None`.
    fn run(&mut self, a_init: f64, a_max: f64) -> Option<Trial> {
        let mut prev = Trial {
            a: 0.0,
            point: None,
            f: self.f0,
            df: self.df0,
        };
        let mut a = a_init.min(a_max);
        let mut first = true;
        while self.evals < self.max_evals {
            let t = self.eval(a);
            if !self.sufficient(&t) || (!first && t.f > prev.f + self.eps) {
                return self.zoom(prev, t);
            }
            if self.curvature(&t) {
                return Some(t);
            }
            if t.df >= 0.0 {
                return self.zoom(t, prev);
            }
            if a >= a_max {
                // Still descending at the feasibility limit: stop on the bound.
                return Some(t);
            }
            first = false;
            let next = extrapolate(prev.a, prev.f, prev.df, t.a, t.f, t.df);
            prev = t;
            a = next.min(a_max);
        }
        None
    }

    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Option<Trial> {
        let mut widths = [f64::INFINITY; 2];
        let mut flat = 0;
        while self.evals < self.max_evals {
            let width = (hi.a - lo.a).abs();
            let a = if width > 0.5 * widths[1] || !(hi.f.is_finite() && hi.df.is_finite()) {
                lo.a + 0.5 * (hi.a - lo.a)
            } else if (hi.f - lo.f).abs() <= self.eps {
                secant_step(lo.a, lo.df, hi.a, hi.df)
            } else {
                cubic_step(lo.a, lo.f, lo.df, hi.a, hi.f, hi.df)
            };
            widths = [width, widths[0]];
            let t = self.eval(a);
            if (t.f - self.f0).abs() <= self.eps {
                flat += 1;
            }
            if !self.sufficient(&t) || t.f > lo.f + self.eps {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Some(t);
                }
                if t.df * (hi.a - lo.a) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
            // Values indistinguishable from rounding, or a bracket that no
            // longer resolves distinct points: take what we have.
            if flat >= FLAT_TRIALS
                || (hi.a - lo.a).abs() * self.d_scale <= f64::EPSILON * self.x_scale
            {
                break;
            }
        }
        if lo.point.is_some() {
            Some(lo)
        } else {
            None
        }
    }
}

/// Minimizes `f` from `x0`. `f` returns the value and the gradient.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &Options) -> Result<OptimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let lower = opts.lower.as_deref();
    if let Some(l) = lower {
        if l.len() != n {
            return Err(Error::Dimension {
                what: "lower bounds",
                expected: n,
                got: l.len(),
            });
        }
        if x0.iter().zip(l).any(|(x, l)| x < l) {
            return Err(Error::Invalid(
                "starting point violates the lower bounds".into(),
            ));
        }
    }
    if opts
        .h0
        .as_ref()
        .is_some_and(|h| h.len() != n || h.iter().any(|v| !(*v > 0.0)))
    {
        return Err(Error::Invalid(
            "preconditioner must be positive with one entry per variable".into(),
        ));
    }
    if !(opts.gtol > 0.0) {
        return Err(Error::Invalid("gradient tolerance must be positive".into()));
    }
    let (f0, g0) = f(x0)?;
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the starting point"));
    }
    let mut cur = Point {
        x: x0.to_vec(),
        f: f0,
        g: g0,
    };
    let mut evaluations = 1;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut skipped = 0;
    let mut pg = projected_gradient(&cur.x, &cur.g, lower);
    let mut history = vec![IterationRecord {
        iter: 0,
        value: cur.f,
        grad_norm: norm_inf(&pg),
        step: 0.0,
        evaluations: 1,
    }];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if norm_inf(&pg) <= opts.gtol {
            termination = Termination::Converged;
            break;
        }
        let h0 = opts.h0.as_deref();
        let mut d = direction(&pairs, &pg, h0);
        for i in 0..n {
            if pg[i] == 0.0 && at_bound(cur.x[i], lower.map(|l| l[i])) {
                d[i] = 0.0;
            }
        }
        let mut df0 = dot(&d, &cur.g);
        if !(df0 < 0.0) {
            pairs.clear();
            d = direction(&pairs, &pg, h0);
            df0 = dot(&d, &cur.g);
        }
        let mut a_max = f64::INFINITY;
        if let Some(l) = lower {
            for i in 0..n {
                if d[i] < 0.0 {
                    a_max = a_max.min((cur.x[i] - l[i]) / -d[i]);
                }
            }
        }
        // Without curvature information, move at most one unit in the
        // preconditioned metric.
        let a_init = if pairs.is_empty() {
            let size = match h0 {
                Some(h) => d
                    .iter()
                    .zip(h)
                    .map(|(di, hi)| di.abs() / crate::math::sqrt(*hi))
                    .fold(0.0, f64::max),
                None => norm_inf(&d),
            };
            (1.0 / size).min(1.0)
        } else {
            1.0
        };
        let mut ls = LineSearch {
            f: &mut f,
            evals: 0,
            max_evals: opts.max_line_evals,
            x: &cur.x,
            d: &d,
            f0: cur.f,
            df0,
            c1: opts.c1,
            c2: opts.c2,
            eps: opts.f_noise * cur.f.abs(),
            x_scale: norm_inf(&cur.x).max(f64::MIN_POSITIVE),
            d_scale: norm_inf(&d),
        };
        let outcome = ls.run(a_init, a_max);
        evaluations += ls.evals;
        let Some(trial) = outcome else {
            if !pairs.is_empty() {
                // Retry once from the preconditioned gradient.
                pairs.clear();
                continue;
            }
            termination = Termination::LineSearchFailed;
            break;
        };
        let step = trial.a;
        let mut next = trial.point.expect("accepted trial was evaluated");
        if let Some(l) = lower {
            // Land exactly on bounds reached by the capped step.
            for i in 0..n {
                if next.x[i] < l[i]
                    || (step >= a_max
                        && d[i] < 0.0
                        && (next.x[i] - l[i]).abs() <= 1e-12 * l[i].abs().max(1.0))
                {
                    next.x[i] = l[i];
                }
            }
        }
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        } else {
            skipped += 1;
        }
        cur = next;
        iterations += 1;
        pg = projected_gradient(&cur.x, &cur.g, lower);
        history.push(IterationRecord {
            iter: iterations,
            value: cur.f,
            grad_norm: norm_inf(&pg),
            step,
            evaluations,
        });
    }
    if termination == Termination::MaxIterations && norm_inf(&pg) <= opts.gtol {
        termination = Termination::Converged;
    }
    Ok(OptimizeResult {
        grad_norm: norm_inf(&pg),
        x: cur.x,
        value: cur.f,
        gradient: cur.g,
        iterations,
        evaluations,
        skipped_updates: skipped,
        termination,
        history,
    })
}
