//! Log-gamma, regularized incomplete gamma and the chi-squared quantile.

use crate::error::{Error, Result};

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-15;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower and upper incomplete gamma `(P(a, x), Q(a, x))`.
///
/// Series for `x < a + 1`, Lentz continued fraction otherwise; the other
/// half is the complement.
pub fn gamma_inc_pair(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !(x >= 0.0) {
        return Err(Error::domain(format!(
            "incomplete gamma needs a > 0, x >= 0 (a={a}, x={x})"
        )));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                let p = (sum.ln() + log_prefactor).exp().min(1.0);
                return Ok((p, 1.0 - p));
            }
        }
        Err(Error::Numerical(
            "incomplete gamma series did not converge".into(),
        ))
    } else {
        let tiny = f64::MIN_POSITIVE / EPS;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                let q = (h.ln() + log_prefactor).exp().min(1.0);
                return Ok((1.0 - q, q));
            }
        }
        Err(Error::Numerical(
            "incomplete gamma continued fraction did not converge".into(),
        ))
    }
}

/// Chi-squared CDF with `p` degrees of freedom.
pub fn chi_squared_cdf(p: usize, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_inc_pair(p as f64 / 2.0, x / 2.0)?.0)
}

/// Chi-squared survival function `P(χ²(p) > x)`.
pub fn chi_squared_sf(p: usize, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_inc_pair(p as f64 / 2.0, x / 2.0)?.1)
}

/// The `x` with `P(χ²(p) > x) = tail`, i.e. `2·P⁻¹(1 − tail, p/2)`.
///
/// Solved on the upper tail to avoid cancellation for small `tail`:
/// bracket by doubling, then safeguarded Newton steps inside the bracket.
pub fn chi_squared_upper_quantile(p: usize, tail: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::domain("chi-squared needs p >= 1"));
    }
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::domain(format!(
            "tail probability must lie in (0, 1), got {tail}"
        )));
    }
    let a = p as f64 / 2.0;
    let f = |x: f64| -> Result<f64> { Ok(chi_squared_sf(p, x)? - tail) };

    let mut lo = 0.0;
    let mut hi = (p as f64).max(1.0);
    while f(hi)? > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical(
                "chi-squared quantile bracket overflow".into(),
            ));
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // density of chi^2(p) at x; d(sf)/dx = -pdf
        let log_pdf = (a - 1.0) * (x / 2.0).ln() - x / 2.0 - ln_gamma(a) - std::f64::consts::LN_2;
        let pdf = log_pdf.exp();
        let newton = x + fx / pdf;
        let next = if pdf > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x || hi - lo <= 4.0 * f64::EPSILON * x {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}
