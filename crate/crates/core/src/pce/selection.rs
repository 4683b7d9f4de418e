//! Stochastic-testing node selection: `K` collocation nodes out of a
//! candidate rule, picked by greedy column-pivoted QR.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math::{dot, sqrt};

use super::basis::MultiIndexSet;
use super::quadrature::{QuadratureRule, RuleKind};

/// Largest accepted condition number of the collocation matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Selected nodes and the square collocation matrix `V[j, α] = Ψ_α(ξ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Collocation {
    pub rule: QuadratureRule,
    /// Positions of the selected nodes in the candidate rule.
    pub selected: Vec<usize>,
    pub matrix: DMatrix<f64>,
    /// 2-norm condition number of `matrix`.
    pub condition: f64,
}

/// 2-norm condition number from the singular values.
pub fn condition_number(v: &DMatrix<f64>) -> f64 {
    let s = v.clone().singular_values();
    let max = s.max();
    let min = s.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Picks `K = basis.len()` candidates. Rows of the candidate Vandermonde
/// matrix are scaled by `√|w_i|` so that, among comparable rows, heavier
/// nodes are taken first; each step takes the row with the largest
/// component orthogonal to the rows already chosen.
pub fn stochastic_testing_select(
    candidates: &QuadratureRule,
    basis: &MultiIndexSet,
) -> Result<Collocation> {
    let k = basis.len();
    let n = candidates.len();
    if n < k {
        return Err(Error::Invalid(alloc::format!(
            "{n} candidates cannot support {k} basis functions"
        )));
    }
    let raw: Vec<Vec<f64>> = candidates
        .nodes
        .iter()
        .map(|xi| basis.evaluate(xi))
        .collect::<Result<_>>()?;
    let mut rows: Vec<Vec<f64>> = raw
        .iter()
        .zip(&candidates.weights)
        .map(|(r, w)| r.iter().map(|v| v * sqrt(w.abs())).collect())
        .collect();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected = Vec::with_capacity(k);
    for _ in 0..k {
        let norms: Vec<f64> = remaining.iter().map(|&i| dot(&rows[i], &rows[i])).collect();
        let best = norms.iter().copied().fold(0.0, f64::max);
        if !(best > 0.0) {
            return Err(Error::SingularCollocation(f64::INFINITY));
        }
        // Near-ties go to the earliest candidate.
        let pos = norms
            .iter()
            .position(|&v| v >= best * (1.0 - 1e-10))
            .expect("maximum exists");
        let pick = remaining.remove(pos);
        let q: Vec<f64> = rows[pick].iter().map(|v| v / sqrt(norms[pos])).collect();
        for &i in &remaining {
            let c = dot(&rows[i], &q);
            rows[i].iter_mut().zip(&q).for_each(|(r, qv)| *r -= c * qv);
        }
        selected.push(pick);
    }
    let matrix = DMatrix::from_fn(k, k, |r, c| raw[selected[r]][c]);
    let condition = condition_number(&matrix);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularCollocation(condition));
    }
    let rule = QuadratureRule {
        kind: RuleKind::StochasticTesting,
        nodes: selected
            .iter()
            .map(|&i| candidates.nodes[i].clone())
            .collect(),
        weights: selected.iter().map(|&i| candidates.weights[i]).collect(),
    };
    Ok(Collocation {
        rule,
        selected,
        matrix,
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pce::quadrature::tensor_rule;
    use crate::rng::NormalStream;

    #[test]
    fn selects_k_nodes() {
        for (p, k) in [(1, 4), (2, 10), (3, 20)] {
            let basis = MultiIndexSet::total_order(3, p).unwrap();
            let sel = stochastic_testing_select(&tensor_rule(3, p).unwrap(), &basis).unwrap();
            assert_eq!(sel.rule.len(), k);
            assert_eq!(sel.matrix.nrows(), k);
            assert!(sel.condition < MAX_CONDITION);
            let mut uniq = sel.selected.clone();
            uniq.sort_unstable();
            uniq.dedup();
            assert_eq!(uniq.len(), k);
        }
    }

    #[test]
    fn better_conditioned_than_random_subsets() {
        let basis = MultiIndexSet::total_order(3, 2).unwrap();
        let cand = tensor_rule(3, 2).unwrap();
        let sel = stochastic_testing_select(&cand, &basis).unwrap();
        let mut rng = NormalStream::new(11);
        let mut conds = Vec::new();
        for _ in 0..100 {
            // Partial Fisher–Yates shuffle for a random 10-subset.
            let mut idx: Vec<usize> = (0..cand.len()).collect();
            for i in 0..basis.len() {
                let len = idx.len();
                let j = i + (rng.uniform() * (len - i) as f64) as usize;
                idx.swap(i, j.min(len - 1));
            }
            let v = DMatrix::from_fn(basis.len(), basis.len(), |r, c| {
                basis.evaluate(&cand.nodes[idx[r]]).unwrap()[c]
            });
            conds.push(condition_number(&v));
        }
        conds.sort_by(f64::total_cmp);
        assert!(
            sel.condition <= conds[50],
            "{} vs median {}",
            sel.condition,
            conds[50]
        );
    }

    #[test]
    fn too_few_candidates() {
        let basis = MultiIndexSet::total_order(3, 2).unwrap();
        assert!(stochastic_testing_select(&tensor_rule(3, 1).unwrap(), &basis).is_err());
    }
}
