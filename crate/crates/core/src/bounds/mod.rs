//! Worst-case tail probabilities `sup P(q ≥ α)` over all distributions on
//! `[0, ∞)` that share a given moment sequence.
//!
//! Orders one and two have closed forms ([`markov_bound`], [`chebyshev_bound`]);
//! any order goes through the SDP in [`sdp`]. [`oracle_worst_case`] is an
//! independent primal check that searches atomic distributions directly.

mod ipm;
mod oracle;
pub mod sdp;

pub use oracle::{oracle_worst_case, OracleResult};
pub use sdp::{
    build_sdp, solve_sdp, worst_case_tail, Block, ConstraintRow, SdpProblem, SdpSolution, SdpStatus,
};

use crate::error::{Error, Result};
use crate::moments::MomentSequence;

/// Feasibility tolerance applied before the closed forms.
const FEASIBILITY_TOL: f64 = 1e-9;

/// The dual polynomial `p(q) = Σ y_r qʳ` certifying a tail bound at `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyBound {
    pub coeffs: Vec<f64>,
    pub threshold: f64,
}

/// Smallest slack of a [`PolyBound`] over a sampled grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    /// `min p(q) − 1` over the grid on `(α, upper]`.
    pub min_excess_above: f64,
    /// `min p(q)` over the grid on `[0, α]`.
    pub min_value_below: f64,
}

impl CertificateCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.min_excess_above >= -tol && self.min_value_below >= -tol
    }
}

impl PolyBound {
    pub fn eval(&self, q: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * q + c)
    }

    /// Evaluate the two dominance conditions on `points` grid points each,
    /// covering `[0, α]` and `(α, upper]`.
    pub fn check(&self, upper: f64, points: usize) -> CertificateCheck {
        let alpha = self.threshold;
        let points = points.max(2);
        let min_below = (0..points)
            .map(|i| self.eval(alpha * i as f64 / (points - 1) as f64))
            .fold(f64::INFINITY, f64::min);
        let min_above = (1..=points)
            .map(|i| self.eval(alpha + (upper - alpha) * i as f64 / points as f64) - 1.0)
            .fold(f64::INFINITY, f64::min);
        CertificateCheck {
            min_excess_above: min_above,
            min_value_below: min_below,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "threshold must be positive, got {alpha}"
        )))
    }
}

/// `min(1, M¹ / α)`.
pub fn markov_bound(moments: &MomentSequence, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((moments.mean() / alpha).min(1.0))
}

/// Tight tail bound on `[0, ∞)` from the first two moments.
///
/// Writing `α = (1 + δ) M¹` and `C² = (M² − (M¹)²)/(M¹)²`, the bound is
/// `min(M¹/α, C²/(C² + δ²))` for `α > M¹` and 1 otherwise. The one-sided
/// Chebyshev term alone is tight only once `δ ≥ C²` (`α ≥ M²/M¹`); below that
/// the extremal law puts its mass at 0 and just above `α`, and Markov binds.
pub fn chebyshev_bound(moments: &MomentSequence, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if moments.order() < 2 {
        return Err(Error::dimension(
            "chebyshev bound needs moments up to order 2",
        ));
    }
    let two = moments.truncate(2)?;
    if !two.is_feasible(FEASIBILITY_TOL) {
        return Err(Error::domain("infeasible moment sequence"));
    }
    let mean = moments.mean();
    if alpha <= mean {
        return Ok(1.0);
    }
    let var = two.variance().unwrap_or(0.0).max(0.0);
    let gap = alpha - mean;
    Ok((var / (var + gap * gap)).min(mean / alpha))
}
