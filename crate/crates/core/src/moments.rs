//! Truncated moment sequences of the scalar detection measure.
//!
//! A [`MomentSequence`] stores raw moments `(M⁰, M¹, …, Mᵏ)` with `M⁰ = 1` of a
//! random variable supported on the nonnegative reals. Feasibility (whether some
//! probability measure on `[0, ∞)` has exactly these moments) is decided by the
//! two Hankel matrices of [`HankelPair`]:
//!
//! ```text
//! R_2l   = [M_{i+j}]_{i,j=0..l}
//! R_2l+1 = [M_{i+j+1}]_{i,j=0..l}
//! ```
//!
//! The sequence of order `k` is feasible iff `R_k ⪰ 0` and `R_{k-1} ⪰ 0`.
//!
//! Multivariate moment sets over the residual vector (multi-index moments of
//! the process and sensor noise) are not represented here; only the scalar
//! detection measure is.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Support of the random variable whose moments are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    NonnegativeReals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSequence {
    moments: Vec<f64>,
    support: Support,
}

/// The Hankel matrices `R_k` and `R_{k-1}`, split into the even-index and
/// odd-index member.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    /// `R_{2l}` with entries `M_{i+j}`, size `⌊k/2⌋ + 1`.
    pub r_even: DMatrix<f64>,
    /// `R_{2l+1}` with entries `M_{i+j+1}`, size `⌈k/2⌉`.
    pub r_odd: DMatrix<f64>,
}

impl HankelPair {
    /// Both members are PSD with smallest eigenvalue ≥ `-tol · scale`, where
    /// `scale` is the largest absolute entry of the respective matrix (at least 1).
    pub fn is_psd(&self, tol: f64) -> bool {
        [&self.r_even, &self.r_odd].into_iter().all(|m| {
            let scale = linalg::max_abs(m).max(1.0);
            linalg::min_eigenvalue(m) >= -tol * scale
        })
    }
}

impl MomentSequence {
    /// Raw moments `(1, M¹, …, Mᵏ)`; needs `k ≥ 1`, `M⁰ == 1` and finite entries.
    pub fn new(moments: Vec<f64>) -> Result<Self> {
        if moments.len() < 2 {
            return Err(Error::dimension(format!(
                "moment sequence needs order k >= 1, got {} entries",
                moments.len()
            )));
        }
        if moments[0] != 1.0 {
            return Err(Error::domain(format!(
                "M0 must be exactly 1, got {}",
                moments[0]
            )));
        }
        if let Some(bad) = moments.iter().position(|m| !m.is_finite()) {
            return Err(Error::domain(format!("moment M{bad} is not finite")));
        }
        Ok(Self {
            moments,
            support: Support::NonnegativeReals,
        })
    }

    pub fn order(&self) -> usize {
        self.moments.len() - 1
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    pub fn support(&self) -> Support {
        self.support
    }

    /// `Mʳ`; panics when `r > order`.
    pub fn get(&self, r: usize) -> f64 {
        self.moments[r]
    }

    pub fn mean(&self) -> f64 {
        self.moments[1]
    }

    /// Variance `M² − (M¹)²`; `None` for order 1.
    pub fn variance(&self) -> Option<f64> {
        (self.order() >= 2).then(|| self.moments[2] - self.moments[1] * self.moments[1])
    }

    /// Squared coefficient of variation `(M² − (M¹)²) / (M¹)²`.
    pub fn squared_cv(&self) -> Option<f64> {
        self.variance()
            .map(|v| v / (self.moments[1] * self.moments[1]))
    }

    /// Central moments `E[(q − M¹)ʳ]`, `r = 0..=k`.
    pub fn central_moments(&self) -> Vec<f64> {
        let mu = self.mean();
        (0..=self.order())
            .map(|r| {
                (0..=r)
                    .map(|j| binomial(r, j) * self.moments[j] * (-mu).powi((r - j) as i32))
                    .sum()
            })
            .collect()
    }

    /// First `k` moments of the same variable.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.order() {
            return Err(Error::dimension(format!(
                "cannot truncate order {} sequence to order {k}",
                self.order()
            )));
        }
        Self::new(self.moments[..=k].to_vec())
    }

    /// Moments of `c · q`: `Mʳ ↦ cʳ Mʳ`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::domain(format!(
                "scale factor must be positive, got {c}"
            )));
        }
        let mut pow = 1.0;
        let moments = self
            .moments
            .iter()
            .map(|m| {
                let v = m * pow;
                pow *= c;
                v
            })
            .collect();
        Self::new(moments)
    }

    /// Convex combination `(1 − w)·self + w·other` of two sequences of equal order.
    pub fn mix(&self, other: &Self, w: f64) -> Result<Self> {
        if self.order() != other.order() {
            return Err(Error::dimension("mixing sequences of different order"));
        }
        let mut moments: Vec<f64> = self
            .moments
            .iter()
            .zip(&other.moments)
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        moments[0] = 1.0;
        Self::new(moments)
    }

    pub fn hankel(&self) -> HankelPair {
        let k = self.order();
        let m = &self.moments;
        let even_size = k / 2 + 1;
        let odd_size = k.div_ceil(2);
        HankelPair {
            r_even: DMatrix::from_fn(even_size, even_size, |i, j| m[i + j]),
            r_odd: DMatrix::from_fn(odd_size, odd_size, |i, j| m[i + j + 1]),
        }
    }

    /// Whether the sequence is the moment vector of some measure on `[0, ∞)`,
    /// up to the relative eigenvalue tolerance `tol`.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.hankel().is_psd(tol)
    }

    /// `k, M0, M1, ..., Mk`
    pub fn to_csv_row(&self) -> String {
        let mut row = self.order().to_string();
        for m in &self.moments {
            row.push_str(", ");
            row.push_str(&format_float(*m));
        }
        row
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        let k: usize = fields[0]
            .parse()
            .map_err(|_| Error::input(format!("bad order field {:?}", fields[0])))?;
        if fields.len() != k + 2 {
            return Err(Error::dimension(format!(
                "order {k} row needs {} moment fields, found {}",
                k + 1,
                fields.len() - 1
            )));
        }
        let moments = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::input(format!("bad moment field {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(moments)
    }
}

/// Empirical raw moments `Mʳ = (1/N) Σ xᵢʳ` for `r = 0..=k`.
///
/// Sums are accumulated with Neumaier compensation.
pub fn estimate_moments(samples: &[f64], k: usize) -> Result<MomentSequence> {
    if samples.is_empty() {
        return Err(Error::input("cannot estimate moments from an empty sample"));
    }
    if k == 0 {
        return Err(Error::input("moment order must be at least 1"));
    }
    if let Some(bad) = samples.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain(format!(
            "samples must be finite and nonnegative, found {bad}"
        )));
    }
    let mut sums = vec![CompensatedSum::default(); k];
    for &x in samples {
        let mut pow = 1.0;
        for sum in sums.iter_mut() {
            pow *= x;
            sum.add(pow);
        }
    }
    let n = samples.len() as f64;
    let mut moments = Vec::with_capacity(k + 1);
    moments.push(1.0);
    moments.extend(sums.iter().map(|s| s.value() / n));
    MomentSequence::new(moments)
}

/// Raw moments of a chi-squared variable with `p` degrees of freedom:
/// `Mʳ = ∏_{j<r} (p + 2j)`.
pub fn chi_squared_moments(p: usize, k: usize) -> Result<MomentSequence> {
    if p == 0 || k == 0 {
        return Err(Error::input("chi-squared moments need p >= 1 and k >= 1"));
    }
    let mut moments = Vec::with_capacity(k + 1);
    let mut m = 1.0;
    moments.push(m);
    for j in 0..k {
        m *= (p + 2 * j) as f64;
        moments.push(m);
    }
    MomentSequence::new(moments)
}

/// Raw moments of an exponential variable with the given mean: `r! · meanʳ`.
pub fn exponential_moments(mean: f64, k: usize) -> Result<MomentSequence> {
    if !(mean > 0.0) || k == 0 {
        return Err(Error::input("exponential moments need mean > 0 and k >= 1"));
    }
    let mut moments = vec![1.0];
    let mut m = 1.0;
    for r in 1..=k {
        m *= r as f64 * mean;
        moments.push(m);
    }
    MomentSequence::new(moments)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub(crate) fn format_float(v: f64) -> String {
    format!("{v:.12e}")
}

#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
