//! Detector thresholds for a target false-alarm rate `𝒜`.
//!
//! Four knowledge models, from most to least informed:
//!
//! * exact chi-squared statistics ([`chi_squared_threshold`]);
//! * `k` moments of the detection measure, tuned by bisection on the SDP bound
//!   ([`tune_threshold_sdp`]), with closed forms for `k = 1, 2`
//!   ([`closed_form_threshold`]);
//! * the first two moments of the `p`-dimensional residual
//!   ([`dr_threshold_two_moments`]).
//!
//! Thresholds guarantee that the worst-case *alarm* probability
//! `sup P(q > α)` over the ambiguity set is at most `𝒜`.

use std::fmt;

use crate::bounds::{chebyshev_bound, markov_bound, worst_case_tail};
use crate::error::{Error, Result};
use crate::moments::{exponential_moments, format_float, MomentSequence};
use crate::special;

/// Solver tolerance used inside the bisection.
pub const SDP_TOL: f64 = 1e-9;

/// Largest admissible false-alarm rate; thresholds below the mean are not useful.
pub const MAX_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ChiSquared,
    DrChebyshevMultivariate,
    ClosedFormK1,
    ClosedFormK2,
    SdpBisection,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ChiSquared => "chi_squared",
            Method::DrChebyshevMultivariate => "dr_chebyshev_multivariate",
            Method::ClosedFormK1 => "closed_form_k1",
            Method::ClosedFormK2 => "closed_form_k2",
            Method::SdpBisection => "sdp_bisection",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub alpha: f64,
    pub method: Method,
    /// Moment order (degrees of freedom for the chi-squared and multivariate rows).
    pub k: usize,
    pub target_rate: f64,
    /// Worst-case alarm probability at `alpha` under the method's knowledge model.
    pub achieved_worst_case: f64,
    /// Bisection tolerance; zero for closed forms.
    pub epsilon: f64,
    /// The lower bracket already met the target, so no bisection took place.
    pub bracket_degenerate: bool,
}

impl ThresholdResult {
    pub const CSV_HEADER: &'static str = "method, k, target_rate, alpha, achieved, epsilon";

    /// `method, k, target_rate, alpha, achieved, epsilon`
    pub fn to_csv_row(&self) -> String {
        format!(
            "{}, {}, {}, {}, {}, {}",
            self.method,
            self.k,
            format_float(self.target_rate),
            format_float(self.alpha),
            format_float(self.achieved_worst_case),
            format_float(self.epsilon)
        )
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "false-alarm rate must lie in (0, 1), got {rate}"
        )))
    }
}

fn check_tuning_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate <= MAX_RATE {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "moment-based tuning needs a false-alarm rate in (0, {MAX_RATE}], got {rate}"
        )))
    }
}

/// The `(1 − rate)` quantile of `χ²(p)`.
pub fn chi_squared_threshold(p: usize, rate: f64) -> Result<f64> {
    check_rate(rate)?;
    special::chi_squared_upper_quantile(p, rate)
}

/// `p / rate`: the two-moment robust threshold on `rᵀΣ_r⁻¹r` for a
/// `p`-dimensional residual.
pub fn dr_threshold_two_moments(p: usize, rate: f64) -> Result<f64> {
    check_rate(rate)?;
    if p == 0 {
        return Err(Error::domain("residual dimension must be at least 1"));
    }
    Ok(p as f64 / rate)
}

/// Closed-form thresholds for `k = 1` (Markov) and `k = 2`.
///
/// The `k = 2` threshold is `(1 + min(1/A − 1, C √((1 − A)/A))) M¹`, the
/// inverse of [`chebyshev_bound`]; for small `A` the second term is the
/// smaller one.
pub fn closed_form_threshold(
    moments: &MomentSequence,
    rate: f64,
    k: usize,
) -> Result<ThresholdResult> {
    check_rate(rate)?;
    if moments.order() < k {
        return Err(Error::dimension(format!(
            "order {k} threshold needs {k} moments, got {}",
            moments.order()
        )));
    }
    let m1 = moments.mean();
    let (alpha, method, achieved) = match k {
        1 => {
            let alpha = m1 / rate;
            (alpha, Method::ClosedFormK1, markov_bound(moments, alpha)?)
        }
        2 => {
            let cv2 = moments
                .squared_cv()
                .ok_or_else(|| Error::dimension("need second moment"))?;
            if !moments.truncate(2)?.is_feasible(1e-9) {
                return Err(Error::domain("infeasible moment sequence"));
            }
            let delta = (((1.0 - rate) / rate).sqrt() * cv2.max(0.0).sqrt()).min(1.0 / rate - 1.0);
            let alpha = (1.0 + delta) * m1;
            // A point mass sits exactly at the threshold and never alarms.
            let achieved = if cv2 <= 0.0 {
                0.0
            } else {
                chebyshev_bound(moments, alpha)?
            };
            (alpha, Method::ClosedFormK2, achieved)
        }
        _ => {
            return Err(Error::input(format!(
                "closed forms exist for k = 1, 2 only; use tune_threshold_sdp for k = {k}"
            )))
        }
    };
    Ok(ThresholdResult {
        alpha,
        method,
        k,
        target_rate: rate,
        achieved_worst_case: achieved,
        epsilon: 0.0,
        bracket_degenerate: false,
    })
}

/// Upper end of the bisection bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpperBracket {
    /// The order `k − 1` threshold, computed recursively down to the closed forms.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOptions {
    pub epsilon: f64,
    /// Defaults to `M¹`.
    pub alpha_lower: Option<f64>,
    pub alpha_upper: UpperBracket,
    pub sdp_tol: f64,
}

impl BisectionOptions {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            alpha_lower: None,
            alpha_upper: UpperBracket::Auto,
            sdp_tol: SDP_TOL,
        }
    }
}

/// Worst-case alarm probability at `alpha`, retrying once on a slightly
/// interior perturbation of the moments when the solver reports trouble.
///
/// Every solution carries a repaired certificate, so its objective is an upper
/// bound whatever the solver status. If neither attempt converges the smaller
/// of the two certified bounds is returned; it may be loose but is never
/// optimistic.
pub fn worst_case_probability(moments: &MomentSequence, alpha: f64, tol: f64) -> Result<f64> {
    let sol = worst_case_tail(moments, alpha, tol)?;
    if sol.status.is_converged() {
        return Ok(sol.objective);
    }
    let nudged = nudge_interior(moments)?;
    let retry = worst_case_tail(&nudged, alpha, tol)?;
    if retry.status.is_converged() {
        return Ok(retry.objective);
    }
    let bound = sol.objective.min(retry.objective);
    if bound.is_finite() {
        Ok(bound)
    } else {
        Err(Error::Numerical(format!(
            "SDP solve at alpha = {alpha} ended with status {}",
            retry.status.as_str()
        )))
    }
}

/// Mix `1e-8` of an exponential law with the same mean into the sequence,
/// which moves a boundary moment vector into the interior.
fn nudge_interior(moments: &MomentSequence) -> Result<MomentSequence> {
    let mean = moments.mean().max(f64::MIN_POSITIVE);
    moments.mix(&exponential_moments(mean, moments.order())?, 1e-8)
}

/// Bisection on the SDP bound for the smallest threshold whose worst-case
/// alarm probability does not exceed `rate`.
///
/// The loop keeps `bound(α_l) > 𝒜 ≥ bound(α_u)` and halves until
/// `α_u − α_l ≤ ε`; the returned threshold is `α_u`.
pub fn tune_threshold_sdp(
    moments: &MomentSequence,
    rate: f64,
    options: &BisectionOptions,
) -> Result<ThresholdResult> {
    let k = moments.order();
    if k < 2 {
        return Err(Error::input(
            "SDP bisection needs k >= 2; use the Markov closed form for k = 1",
        ));
    }
    let upper = match options.alpha_upper {
        UpperBracket::Value(v) => v,
        UpperBracket::Auto => {
            let chain = tune_threshold_chain(&moments.truncate(k - 1)?, rate, options.epsilon)?;
            chain.last().expect("chain covers order k - 1").alpha
        }
    };
    bisect(moments, rate, options, upper)
}

fn bisect(
    moments: &MomentSequence,
    rate: f64,
    options: &BisectionOptions,
    upper: f64,
) -> Result<ThresholdResult> {
    check_tuning_rate(rate)?;
    if !(options.epsilon > 0.0) {
        return Err(Error::domain("bisection tolerance must be positive"));
    }
    if !moments.is_feasible(1e-9) {
        return Err(Error::domain("infeasible moment sequence"));
    }
    let k = moments.order();
    let mut lower = options.alpha_lower.unwrap_or_else(|| moments.mean());
    let mut upper = upper;
    if !(lower > 0.0) || !(upper > lower) {
        return Err(Error::input(format!("invalid bracket [{lower}, {upper}]")));
    }
    let eval = |alpha: f64, lower: f64, upper: f64| {
        worst_case_probability(moments, alpha, options.sdp_tol).map_err(|e| Error::Bisection {
            alpha,
            lower,
            upper,
            reason: e.to_string(),
        })
    };

    let at_lower = eval(lower, lower, upper)?;
    if at_lower <= rate {
        return Ok(ThresholdResult {
            alpha: lower,
            method: Method::SdpBisection,
            k,
            target_rate: rate,
            achieved_worst_case: at_lower,
            epsilon: options.epsilon,
            bracket_degenerate: true,
        });
    }

    let mut achieved_at_upper = None;
    while upper - lower > options.epsilon {
        let mid = 0.5 * (upper + lower);
        let p_min = eval(mid, lower, upper)?;
        if p_min > rate {
            lower = mid;
        } else {
            upper = mid;
            achieved_at_upper = Some(p_min);
        }
    }
    let achieved = match achieved_at_upper {
        Some(p) => p,
        None => eval(upper, lower, upper)?,
    };
    Ok(ThresholdResult {
        alpha: upper,
        method: Method::SdpBisection,
        k,
        target_rate: rate,
        achieved_worst_case: achieved,
        epsilon: options.epsilon,
        bracket_degenerate: false,
    })
}

/// Thresholds for every order `1..=k` of the sequence, each order's result
/// seeding the next order's upper bracket.
pub fn tune_threshold_chain(
    moments: &MomentSequence,
    rate: f64,
    epsilon: f64,
) -> Result<Vec<ThresholdResult>> {
    check_tuning_rate(rate)?;
    let k = moments.order();
    let mut out = vec![closed_form_threshold(moments, rate, 1)?];
    if k >= 2 {
        out.push(closed_form_threshold(moments, rate, 2)?);
    }
    for order in 3..=k {
        let truncated = moments.truncate(order)?;
        let upper = out.last().expect("orders 1 and 2 present").alpha;
        let opts = BisectionOptions::new(epsilon);
        out.push(bisect(&truncated, rate, &opts, upper)?);
    }
    Ok(out)
}

/// Threshold of order `k` using the cheapest available route.
pub fn tune_threshold(
    moments: &MomentSequence,
    rate: f64,
    k: usize,
    epsilon: f64,
) -> Result<ThresholdResult> {
    if k == 0 || k > moments.order() {
        return Err(Error::dimension(format!(
            "order {k} unavailable from a sequence of order {}",
            moments.order()
        )));
    }
    tune_threshold_chain(&moments.truncate(k)?, rate, epsilon)?
        .pop()
        .ok_or_else(|| Error::input("empty threshold chain"))
}
