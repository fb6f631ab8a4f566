//! The moment-bound SDP.
//!
//! The dual of `sup P(q ≥ α)` over measures on `[0, ∞)` with moments `M⁰..Mᵏ`
//! searches for a polynomial `p(q) = Σ y_r qʳ` with `p ≥ 1` on `[α, ∞)` and
//! `p ≥ 0` on `[0, α]`, minimizing `Σ y_r Mʳ`. Both nonnegativity conditions
//! become PSD conditions on `(k+1)×(k+1)` Gram matrices:
//!
//! * `X`: `p(α + s²) − 1 = v(s)ᵀ X v(s)`, `v(s) = (1, s, …, sᵏ)`. Odd
//!   antidiagonal sums vanish, `x₀₀ = (y₀ − 1) + Σ y_r αʳ`, and the `2l`-th
//!   antidiagonal sums to `Σ_{r≥l} y_r C(r,l) α^{r−l}`.
//! * `Z`: `(1 + s²)ᵏ p(α s² / (1 + s²))` is a sum of squares. Odd antidiagonals
//!   vanish and the `2l`-th antidiagonal sums to `Σ_{r≤l} y_r C(k−r, l−r) α^{r−l}`.
//!   The `α^{r−l}` form is the `αʳ` coefficient divided by `αˡ`, which is the
//!   diagonal congruence `Z ↦ D Z D`, `D = diag(α^{−i/2})`, so PSD-ness is
//!   unaffected.
//!
//! [`solve_sdp`] rescales `q ↦ q/α` before solving (threshold 1, moments
//! `Mʳ/αʳ`), which keeps the coefficients of order one, and maps the solution
//! back to the caller's scale.

use nalgebra::{DMatrix, DVector};

use super::ipm::{ConicProblem, IpmSettings, IpmStatus};
use super::PolyBound;
use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::{binomial, format_float, MomentSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Certifies `p ≥ 1` above the threshold.
    X,
    /// Certifies `p ≥ 0` on `[0, α]`.
    Z,
}

/// `Σ_{i+j = antidiagonal} B_ij = constant + Σ_r y_coeffs[r]·y_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub block: Block,
    pub antidiagonal: usize,
    pub y_coeffs: Vec<f64>,
    pub constant: f64,
}

impl ConstraintRow {
    pub fn rhs(&self, y: &[f64]) -> f64 {
        self.constant + self.y_coeffs.iter().zip(y).map(|(c, y)| c * y).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    k: usize,
    alpha: f64,
    moments: MomentSequence,
    rows: Vec<ConstraintRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// Stopped with feasibility near `1e-5` and an objective gap below
    /// `1e-3`. The repaired certificate is still a valid, slightly loose,
    /// upper bound.
    Inaccurate,
    MaxIter,
    NumericalTrouble,
}

impl SdpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::Inaccurate => "inaccurate",
            SdpStatus::MaxIter => "max_iter",
            SdpStatus::NumericalTrouble => "numerical_trouble",
        }
    }

    /// `Optimal` or `Inaccurate`.
    pub fn is_converged(&self) -> bool {
        matches!(self, SdpStatus::Optimal | SdpStatus::Inaccurate)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Worst-case tail probability, clamped to `[0, 1]`.
    pub objective: f64,
    /// `Σ y_r Mʳ` before clamping.
    pub raw_objective: f64,
    pub poly: PolyBound,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// `|dual − primal|` objective difference at the final iterate.
    pub duality_gap: f64,
    pub iterations: usize,
    pub status: SdpStatus,
}

impl SdpSolution {
    pub const CSV_HEADER_PREFIX: &'static str = "k, alpha, objective, gap, iterations, status";

    /// `k, alpha, objective, gap, iterations, status, y0..yk`
    pub fn to_csv_row(&self) -> String {
        let mut row = format!(
            "{}, {}, {}, {}, {}, {}",
            self.poly.coeffs.len() - 1,
            format_float(self.poly.threshold),
            format_float(self.objective),
            format_float(self.duality_gap),
            self.iterations,
            self.status.as_str()
        );
        for y in &self.poly.coeffs {
            row.push_str(", ");
            row.push_str(&format_float(*y));
        }
        row
    }
}

impl SdpProblem {
    pub fn order(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn moments(&self) -> &MomentSequence {
        &self.moments
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    /// Side length of `X` and `Z`.
    pub fn block_size(&self) -> usize {
        self.k + 1
    }

    pub fn objective(&self, y: &[f64]) -> f64 {
        self.moments
            .moments()
            .iter()
            .zip(y)
            .map(|(m, y)| m * y)
            .sum()
    }

    /// Per-row residual `Σ B_ij − rhs(y)` in row order.
    pub fn residuals(&self, y: &[f64], x: &DMatrix<f64>, z: &DMatrix<f64>) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                let b = match row.block {
                    Block::X => x,
                    Block::Z => z,
                };
                antidiagonal_sum(b, row.antidiagonal) - row.rhs(y)
            })
            .collect()
    }
}

fn antidiagonal_sum(b: &DMatrix<f64>, s: usize) -> f64 {
    let n = b.nrows();
    (0..n)
        .filter(|&i| s >= i && s - i < n)
        .map(|i| b[(i, s - i)])
        .sum()
}

/// Emit the constraint rows of the moment-bound SDP at threshold `alpha`.
pub fn build_sdp(moments: &MomentSequence, alpha: f64) -> Result<SdpProblem> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::domain(format!(
            "threshold must be positive, got {alpha}"
        )));
    }
    let k = moments.order();
    let mut rows = Vec::with_capacity(4 * k + 2);
    let zero_row = |block, antidiagonal| ConstraintRow {
        block,
        antidiagonal,
        y_coeffs: vec![0.0; k + 1],
        constant: 0.0,
    };

    for l in 1..=k {
        rows.push(zero_row(Block::X, 2 * l - 1));
    }
    rows.push(ConstraintRow {
        block: Block::X,
        antidiagonal: 0,
        y_coeffs: (0..=k).map(|r| alpha.powi(r as i32)).collect(),
        constant: -1.0,
    });
    for l in 1..=k {
        rows.push(ConstraintRow {
            block: Block::X,
            antidiagonal: 2 * l,
            y_coeffs: (0..=k)
                .map(|r| {
                    if r >= l {
                        binomial(r, l) * alpha.powi((r - l) as i32)
                    } else {
                        0.0
                    }
                })
                .collect(),
            constant: 0.0,
        });
    }
    for l in 1..=k {
        rows.push(zero_row(Block::Z, 2 * l - 1));
    }
    for l in 0..=k {
        rows.push(ConstraintRow {
            block: Block::Z,
            antidiagonal: 2 * l,
            y_coeffs: (0..=k)
                .map(|r| {
                    if r <= l {
                        binomial(k - r, l - r) * alpha.powi(r as i32 - l as i32)
                    } else {
                        0.0
                    }
                })
                .collect(),
            constant: 0.0,
        });
    }

    Ok(SdpProblem {
        k,
        alpha,
        moments: moments.clone(),
        rows,
    })
}

/// Affine parameterization `B(w) = B₀ + Σ w_i B_i` of both Gram blocks, where
/// `w = (y, u_X, u_Z)` and `u` spans the matrices with zero antidiagonal sums.
struct Lifted {
    k: usize,
    constant: [DMatrix<f64>; 2],
    /// `terms[i]` is the pair of block coefficients of `w_i`.
    terms: Vec<[DMatrix<f64>; 2]>,
}

impl Lifted {
    fn new(prob: &SdpProblem) -> Self {
        let k = prob.k;
        let size = k + 1;
        let nblock = |b: Block| match b {
            Block::X => 0,
            Block::Z => 1,
        };
        let zero = || DMatrix::<f64>::zeros(size, size);

        let mut constant = [zero(), zero()];
        let mut y_terms: Vec<[DMatrix<f64>; 2]> = (0..=k).map(|_| [zero(), zero()]).collect();
        let mut null_terms: Vec<[DMatrix<f64>; 2]> = Vec::new();

        for row in &prob.rows {
            let pairs = antidiagonal_pairs(size, row.antidiagonal);
            let anchor = *pairs.last().expect("antidiagonal has at least one entry");
            let b = nblock(row.block);
            let anchor_unit = unit(size, anchor) / pair_weight(anchor);
            constant[b] += &anchor_unit * row.constant;
            for (r, c) in row.y_coeffs.iter().enumerate() {
                if *c != 0.0 {
                    y_terms[r][b] += &anchor_unit * *c;
                }
            }
            for &p in &pairs[..pairs.len() - 1] {
                let mut t = [zero(), zero()];
                t[b] = unit(size, p) / pair_weight(p) - &anchor_unit;
                null_terms.push(t);
            }
        }
        // y first, then the free directions of X, then those of Z.
        null_terms.sort_by_key(|t| if t[0].iter().any(|v| *v != 0.0) { 0 } else { 1 });
        let mut terms = y_terms;
        terms.extend(null_terms);
        Self { k, constant, terms }
    }

    fn eval(&self, w: &DVector<f64>) -> [DMatrix<f64>; 2] {
        let mut out = self.constant.clone();
        for (wi, t) in w.iter().zip(&self.terms) {
            out[0] += &t[0] * *wi;
            out[1] += &t[1] * *wi;
        }
        out
    }

    fn conic(&self, moments: &[f64]) -> ConicProblem {
        let a = self
            .terms
            .iter()
            .map(|t| vec![-t[0].clone(), -t[1].clone()])
            .collect();
        let b = DVector::from_iterator(
            self.terms.len(),
            (0..self.terms.len()).map(|i| if i <= self.k { -moments[i] } else { 0.0 }),
        );
        ConicProblem {
            c: self.constant.to_vec(),
            a,
            b,
        }
    }
}

fn antidiagonal_pairs(size: usize, s: usize) -> Vec<(usize, usize)> {
    (0..size)
        .filter(|&i| s >= i && s - i < size && i <= s - i)
        .map(|i| (i, s - i))
        .collect()
}

fn pair_weight((i, j): (usize, usize)) -> f64 {
    if i == j {
        1.0
    } else {
        2.0
    }
}

fn unit(size: usize, (i, j): (usize, usize)) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(size, size);
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    m
}

/// Solve the moment-bound SDP to relative accuracy `tol`.
///
/// The returned polynomial is a valid certificate: both Gram matrices are
/// evaluated from the dual variables directly (so every constraint row holds
/// to round-off) and, if the final iterate left them marginally indefinite,
/// `y₀` and `y_k` are raised until both are PSD. The objective is therefore an
/// upper bound on the worst-case probability up to floating-point error.
pub fn solve_sdp(prob: &SdpProblem, tol: f64) -> Result<SdpSolution> {
    if !(tol > 0.0) {
        return Err(Error::domain("solver tolerance must be positive"));
    }
    let k = prob.k;
    let alpha = prob.alpha;
    let normalized_moments = prob.moments.scaled(1.0 / alpha)?;
    let normalized = build_sdp(&normalized_moments, 1.0)?;
    let lifted = Lifted::new(&normalized);
    let conic = lifted.conic(normalized_moments.moments());

    let mut w0 = DVector::zeros(lifted.terms.len());
    w0[0] = 1.0;
    let settings = IpmSettings {
        tol,
        ..IpmSettings::default()
    };
    let result = conic.solve(&settings, w0);

    let mut w = result.w.clone();
    let mut blocks = lifted.eval(&w);
    let mut deficit = blocks
        .iter()
        .map(linalg::min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let mut bump = (-deficit).max(0.0) * 0.5;
    let mut attempts = 0;
    while deficit < 0.0 {
        bump = bump * 2.0 + 1e-15;
        w[0] += bump;
        w[k] += bump;
        blocks = lifted.eval(&w);
        deficit = blocks
            .iter()
            .map(linalg::min_eigenvalue)
            .fold(f64::INFINITY, f64::min);
        attempts += 1;
        if attempts > 60 {
            return Err(Error::Numerical("could not repair SDP certificate".into()));
        }
    }

    let y_norm: Vec<f64> = w.iter().take(k + 1).copied().collect();
    let raw_objective = normalized.objective(&y_norm);
    let y: Vec<f64> = y_norm
        .iter()
        .enumerate()
        .map(|(r, v)| v / alpha.powi(r as i32))
        .collect();
    let unscale = |b: &DMatrix<f64>| {
        DMatrix::from_fn(k + 1, k + 1, |i, j| {
            b[(i, j)] * alpha.powf(-((i + j) as f64) / 2.0)
        })
    };
    let [x_norm, z_norm] = blocks;

    let status = match result.status {
        IpmStatus::Optimal => SdpStatus::Optimal,
        IpmStatus::Inaccurate => SdpStatus::Inaccurate,
        IpmStatus::MaxIter => SdpStatus::MaxIter,
        IpmStatus::NumericalTrouble => SdpStatus::NumericalTrouble,
    };
    // Primal objective is -(tail mass); dual objective is -(bound).
    let duality_gap = (result.primal_objective - result.dual_objective).abs();

    Ok(SdpSolution {
        objective: raw_objective.clamp(0.0, 1.0),
        raw_objective,
        poly: PolyBound {
            coeffs: y,
            threshold: alpha,
        },
        x: unscale(&x_norm),
        z: unscale(&z_norm),
        duality_gap,
        iterations: result.iterations,
        status,
    })
}

/// Convenience: build and solve at `alpha`.
pub fn worst_case_tail(moments: &MomentSequence, alpha: f64, tol: f64) -> Result<SdpSolution> {
    solve_sdp(&build_sdp(moments, alpha)?, tol)
}
