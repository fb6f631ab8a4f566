//! Brute-force primal check: maximize the tail mass over atomic measures.
//!
//! Candidate atoms are laid on a mixed uniform + geometric grid; the
//! moment-matching equalities form an LP in the atom weights whose basic
//! solutions use at most `k + 1` atoms, which is exactly the shape of the
//! extremal measures. The optimum is a lower bound on the true supremum and
//! approaches it as the grid is refined.

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

use crate::error::{Error, Result};
use crate::moments::MomentSequence;

pub const MAX_ORACLE_ORDER: usize = 4;
pub const MIN_ORACLE_GRID: usize = 100;

/// Optimal atomic measure found by the oracle, in the caller's units.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Mass on atoms at or above the threshold.
    pub probability: f64,
    /// `(location, weight)` of atoms with non-negligible weight.
    pub atoms: Vec<(f64, f64)>,
}

/// Lower bound on `sup P(q ≥ α)` from atomic measures on a `grid`-point mesh.
pub fn oracle_worst_case(moments: &MomentSequence, alpha: f64, grid: usize) -> Result<f64> {
    oracle_extremal_measure(moments, alpha, grid).map(|r| r.probability)
}

pub fn oracle_extremal_measure(
    moments: &MomentSequence,
    alpha: f64,
    grid: usize,
) -> Result<OracleResult> {
    let k = moments.order();
    if k > MAX_ORACLE_ORDER {
        return Err(Error::input(format!(
            "oracle supports k <= {MAX_ORACLE_ORDER}, got {k}"
        )));
    }
    if grid < MIN_ORACLE_GRID {
        return Err(Error::input(format!(
            "oracle grid must have >= {MIN_ORACLE_GRID} points"
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::domain(format!(
            "threshold must be positive, got {alpha}"
        )));
    }

    // Work in units of alpha so the threshold sits at 1.
    let scaled = moments.scaled(1.0 / alpha)?;
    let atoms = candidate_atoms(&scaled, grid);
    let upper = *atoms.last().expect("non-empty grid");

    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = atoms
        .iter()
        .map(|&a| lp.add_var(if a >= 1.0 { 1.0 } else { 0.0 }, (0.0, f64::INFINITY)))
        .collect();
    for r in 0..=k {
        // Row r is divided by upper^r to keep coefficients in [0, 1].
        let mut expr = LinearExpr::empty();
        for (v, &a) in vars.iter().zip(&atoms) {
            let c = (a / upper).powi(r as i32);
            if c != 0.0 || r == 0 {
                expr.add(*v, c);
            }
        }
        lp.add_constraint(expr, ComparisonOp::Eq, scaled.get(r) / upper.powi(r as i32));
    }

    let solution = lp.solve().map_err(|e| {
        Error::domain(format!(
            "no atomic measure on the grid matches the moments: {e}"
        ))
    })?;
    let atoms_out = vars
        .iter()
        .zip(&atoms)
        .filter_map(|(v, &a)| {
            let w = *solution.var_value(*v);
            (w > 1e-12).then_some((a * alpha, w))
        })
        .collect();
    Ok(OracleResult {
        probability: solution.objective().clamp(0.0, 1.0),
        atoms: atoms_out,
    })
}

/// Sorted, deduplicated atom locations in units of the threshold. Always
/// contains 0, the threshold itself, and the mean.
fn candidate_atoms(scaled: &MomentSequence, grid: usize) -> Vec<f64> {
    let k = scaled.order();
    let spread = scaled.get(k).abs().powf(1.0 / k as f64);
    let upper = 10.0_f64.max(10.0 * spread);
    let uniform = grid / 2;
    let geometric = grid - uniform;
    let lo: f64 = 1e-3;

    let mut atoms = Vec::with_capacity(grid + 3);
    atoms.push(0.0);
    atoms.push(1.0);
    atoms.push(scaled.mean());
    atoms.extend((1..=uniform).map(|i| upper * i as f64 / uniform as f64));
    let ratio = (upper / lo).ln();
    atoms.extend((0..geometric).map(|i| lo * (ratio * i as f64 / (geometric - 1) as f64).exp()));
    atoms.sort_by(|a, b| a.partial_cmp(b).expect("finite atoms"));
    atoms.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    atoms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::chi_squared_moments;

    #[test]
    fn markov_extremal_two_point() {
        let m = MomentSequence::new(vec![1.0, 2.0]).unwrap();
        let res = oracle_extremal_measure(&m, 4.0, 1000).unwrap();
        assert!((res.probability - 0.5).abs() < 0.01);
    }

    #[test]
    fn point_mass_has_no_tail() {
        let m = MomentSequence::new(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(oracle_worst_case(&m, 2.0, 1000).unwrap().abs() < 1e-9);
    }

    #[test]
    fn chebyshev_extremal() {
        let m = chi_squared_moments(2, 2).unwrap();
        let p = oracle_worst_case(&m, 10.7178, 2000).unwrap();
        assert!((p - 0.05).abs() < 0.005, "{p}");
    }

    #[test]
    fn preconditions() {
        let m5 = chi_squared_moments(2, 5).unwrap();
        assert!(matches!(
            oracle_worst_case(&m5, 9.0, 1000),
            Err(Error::Input(_))
        ));
        let m = chi_squared_moments(2, 2).unwrap();
        assert!(matches!(
            oracle_worst_case(&m, 9.0, 10),
            Err(Error::Input(_))
        ));
        let bad = MomentSequence::new(vec![1.0, 1.0, 0.5]).unwrap();
        assert!(matches!(
            oracle_worst_case(&bad, 2.0, 500),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn grid_contains_anchor_atoms() {
        let m = chi_squared_moments(2, 2).unwrap().scaled(0.1).unwrap();
        let atoms = candidate_atoms(&m, 200);
        assert_eq!(atoms[0], 0.0);
        assert!(atoms.contains(&1.0));
        assert!(atoms.windows(2).all(|w| w[0] < w[1]));
    }
}
