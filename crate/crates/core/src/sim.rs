//! Closed-loop stochastic LTI plant with a steady-state Kalman predictor.
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + w_t          u_t = K x̂_t
//! ȳ_t     = C x_t + v_t + δ_t
//! r_t     = ȳ_t − C x̂_t                  q_t = r_tᵀ Σ_r⁻¹ r_t
//! x̂_{t+1} = A x̂_t + B u_t + L r_t
//! ```
//!
//! `L` is the predictor gain `A P Cᵀ Σ_r⁻¹`, so the estimation error obeys
//! `e_{t+1} = (A − LC) e_t + w_t − L v_t − L δ_t` and `Σ_r = C P Cᵀ + Σ_v`.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, min_eigenvalue, quad_form, spectral_radius, sym_sqrt, symmetrize};
use crate::moments::format_float;
use crate::reach::{zero_alarm_attack, AttackPolicy};

pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 100_000;
/// Steps discarded before recording so the error process is stationary.
pub const BURN_IN: usize = 1_000;
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Steady state of the Riccati recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    /// Prediction error covariance `P = lim E[e_t e_tᵀ]`.
    pub p: DMatrix<f64>,
    /// Predictor gain `A P Cᵀ (C P Cᵀ + Σ_v)⁻¹`, the one used by the estimator.
    pub gain: DMatrix<f64>,
    /// Measurement-update gain `P Cᵀ (C P Cᵀ + Σ_v)⁻¹`.
    pub filter_gain: DMatrix<f64>,
    pub sigma_r: DMatrix<f64>,
    pub iterations: usize,
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dimension(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_covariance(name: &str, m: &DMatrix<f64>, definite: bool) -> Result<()> {
    let scale = max_abs(m).max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(Error::domain(format!("{name} must be symmetric")));
    }
    let lo = min_eigenvalue(&symmetrize(m));
    if definite && lo <= 0.0 {
        return Err(Error::domain(format!(
            "{name} must be positive definite (min eigenvalue {lo})"
        )));
    }
    if lo < -1e-12 * scale {
        return Err(Error::domain(format!(
            "{name} must be positive semidefinite (min eigenvalue {lo})"
        )));
    }
    Ok(())
}

/// `S⁻¹` for the innovation covariance, via Cholesky.
fn spd_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    s.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical("innovation covariance lost positive definiteness".into()))
}

/// Fixed-point iteration of `P ↦ A(P − PCᵀ(CPCᵀ+Σ_v)⁻¹CP)Aᵀ + Σ_w` from `P₀ = Σ_w`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
) -> Result<DareSolution> {
    let n = a.nrows();
    check_square("A", a, n)?;
    if c.ncols() != n {
        return Err(Error::dimension(format!(
            "C must have {n} columns, got {}",
            c.ncols()
        )));
    }
    let p_dim = c.nrows();
    check_square("sigma_w", sigma_w, n)?;
    check_square("sigma_v", sigma_v, p_dim)?;
    check_covariance("sigma_v", sigma_v, true)?;

    let mut p = symmetrize(sigma_w);
    for it in 1..=DARE_MAX_ITER {
        let s = c * &p * c.transpose() + sigma_v;
        let pct = &p * c.transpose();
        let update = &pct * spd_inverse(&s)? * pct.transpose();
        let next = symmetrize(&(a * (&p - update) * a.transpose() + sigma_w));
        if !next.norm().is_finite() {
            return Err(Error::Numerical(
                "Riccati iteration diverged; is (A, C) detectable?".into(),
            ));
        }
        let diff = (&next - &p).norm();
        p = next;
        if diff <= DARE_TOL * p.norm() {
            let sigma_r = symmetrize(&(c * &p * c.transpose() + sigma_v));
            let filter_gain = &p * c.transpose() * spd_inverse(&sigma_r)?;
            let gain = a * &filter_gain;
            return Ok(DareSolution {
                p,
                gain,
                filter_gain,
                sigma_r,
                iterations: it,
            });
        }
    }
    Err(Error::Numerical(format!(
        "Riccati iteration did not converge in {DARE_MAX_ITER} iterations; is (A, C) detectable?"
    )))
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|x| Complex::new(x, 0.0))
}

fn rank_deficient(m: &DMatrix<Complex<f64>>, n: usize) -> bool {
    let sv = m.singular_values();
    let top = sv.max().max(1.0);
    sv.iter().filter(|s| **s > 1e-10 * top).count() < n
}

/// Eigenvalues of `a` on or outside the unit circle that fail the PBH test
/// against `other` (stacked below `a − λI` when `rows`, beside it otherwise).
fn pbh_failures(a: &DMatrix<f64>, other: &DMatrix<f64>, rows: bool) -> Vec<Complex<f64>> {
    let n = a.nrows();
    let ac = complexify(a);
    let oc = complexify(other);
    a.complex_eigenvalues()
        .iter()
        .filter(|l| l.norm() >= 1.0 - 1e-12)
        .filter(|&&l| {
            let shifted = &ac - DMatrix::<Complex<f64>>::identity(n, n) * l;
            let m = if rows {
                let mut m = DMatrix::zeros(n + oc.nrows(), n);
                m.rows_mut(0, n).copy_from(&shifted);
                m.rows_mut(n, oc.nrows()).copy_from(&oc);
                m
            } else {
                let mut m = DMatrix::zeros(n, n + oc.ncols());
                m.columns_mut(0, n).copy_from(&shifted);
                m.columns_mut(n, oc.ncols()).copy_from(&oc);
                m
            };
            rank_deficient(&m, n)
        })
        .copied()
        .collect()
}

/// `(A, C)` detectable by the PBH rank test on the unstable eigenvalues.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    pbh_failures(a, c, true).is_empty()
}

/// `(A, B)` stabilizable by the PBH rank test on the unstable eigenvalues.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    pbh_failures(a, b, false).is_empty()
}

/// Plant, feedback and noise covariances, with the steady-state estimator
/// quantities derived once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    k: DMatrix<f64>,
    sigma_w: DMatrix<f64>,
    sigma_v: DMatrix<f64>,
    dare: DareSolution,
    sigma_r_sqrt: DMatrix<f64>,
    sigma_r_inv: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        k: DMatrix<f64>,
        sigma_w: DMatrix<f64>,
        sigma_v: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        check_square("A", &a, n)?;
        if n == 0 {
            return Err(Error::dimension("state dimension must be at least 1"));
        }
        if b.nrows() != n {
            return Err(Error::dimension(format!(
                "B must have {n} rows, got {}",
                b.nrows()
            )));
        }
        let m = b.ncols();
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::dimension(format!(
                "C must be p x {n}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if k.nrows() != m || k.ncols() != n {
            return Err(Error::dimension(format!(
                "K must be {m}x{n}, got {}x{}",
                k.nrows(),
                k.ncols()
            )));
        }
        check_square("sigma_w", &sigma_w, n)?;
        check_square("sigma_v", &sigma_v, c.nrows())?;
        check_covariance("sigma_w", &sigma_w, false)?;
        check_covariance("sigma_v", &sigma_v, true)?;

        if let Some(l) = pbh_failures(&a, &c, true).first() {
            return Err(Error::domain(format!(
                "(A, C) is not detectable: mode {l} is unobservable"
            )));
        }
        if let Some(l) = pbh_failures(&a, &b, false).first() {
            return Err(Error::domain(format!(
                "(A, B) is not stabilizable: mode {l} is uncontrollable"
            )));
        }

        let dare = solve_dare(&a, &c, &sigma_w, &sigma_v)?;
        let sigma_r_sqrt = sym_sqrt(&dare.sigma_r);
        let sigma_r_inv = spd_inverse(&dare.sigma_r)?;
        let sys = Self {
            a,
            b,
            c,
            k,
            sigma_w,
            sigma_v,
            dare,
            sigma_r_sqrt,
            sigma_r_inv,
        };
        let rho_cl = spectral_radius(&sys.closed_loop());
        if rho_cl >= 1.0 {
            return Err(Error::Unstable(format!(
                "spectral radius of A + BK is {rho_cl}"
            )));
        }
        let rho_est = spectral_radius(&sys.estimator_error_map());
        if rho_est >= 1.0 {
            return Err(Error::Unstable(format!(
                "spectral radius of A - LC is {rho_est}"
            )));
        }
        Ok(sys)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn sigma_w(&self) -> &DMatrix<f64> {
        &self.sigma_w
    }

    pub fn sigma_v(&self) -> &DMatrix<f64> {
        &self.sigma_v
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.dare.p
    }

    /// Predictor gain `L` used by the estimator.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.dare.gain
    }

    pub fn filter_gain(&self) -> &DMatrix<f64> {
        &self.dare.filter_gain
    }

    pub fn sigma_r(&self) -> &DMatrix<f64> {
        &self.dare.sigma_r
    }

    /// Symmetric square root of `Σ_r`.
    pub fn sigma_r_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma_r_sqrt
    }

    pub fn sigma_r_inv(&self) -> &DMatrix<f64> {
        &self.sigma_r_inv
    }

    /// `A + BK`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k
    }

    /// `A − LC`.
    pub fn estimator_error_map(&self) -> DMatrix<f64> {
        &self.a - self.gain() * &self.c
    }

    /// `q = rᵀ Σ_r⁻¹ r`.
    pub fn detection_measure(&self, r: &DVector<f64>) -> f64 {
        quad_form(&self.sigma_r_inv, r).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Gaussian,
    /// Gaussian scale mixture `√E·g`, `E ~ Exp(1)`, `g ~ N(0, Σ)`: same mean
    /// and covariance as the Gaussian, heavier tails.
    #[serde(alias = "laplacian")]
    MultivariateLaplacian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub covariance: DMatrix<f64>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(family: NoiseFamily, covariance: DMatrix<f64>, seed: u64) -> Result<Self> {
        check_square("noise covariance", &covariance, covariance.nrows())?;
        check_covariance("noise covariance", &covariance, false)?;
        Ok(Self {
            family,
            covariance,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// Independent sample stream; different `stream` values never overlap.
    pub fn sampler(&self, stream: u64) -> NoiseSampler {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        NoiseSampler {
            family: self.family,
            root: sym_sqrt(&symmetrize(&self.covariance)),
            rng,
            g: DVector::zeros(self.dim()),
        }
    }
}

pub struct NoiseSampler {
    family: NoiseFamily,
    root: DMatrix<f64>,
    rng: ChaCha8Rng,
    g: DVector<f64>,
}

impl NoiseSampler {
    pub fn sample_into(&mut self, out: &mut DVector<f64>) {
        for gi in self.g.iter_mut() {
            *gi = StandardNormal.sample(&mut self.rng);
        }
        let scale = match self.family {
            NoiseFamily::Gaussian => 1.0,
            NoiseFamily::MultivariateLaplacian => {
                let e: f64 = Exp1.sample(&mut self.rng);
                e.sqrt()
            }
        };
        out.gemv(scale, &self.root, &self.g, 0.0);
    }

    pub fn sample(&mut self) -> DVector<f64> {
        let mut out = DVector::zeros(self.g.len());
        self.sample_into(&mut out);
        out
    }
}

/// Recorded residuals `r_t` (row-major, `p` per step) and measures `q_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    output_dim: usize,
    residuals: Vec<f64>,
    q: Vec<f64>,
    state_dim: usize,
    states: Vec<f64>,
}

impl ResidualTrace {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn residual(&self, t: usize) -> &[f64] {
        &self.residuals[t * self.output_dim..(t + 1) * self.output_dim]
    }

    pub fn residuals(&self) -> impl Iterator<Item = &[f64]> {
        self.residuals.chunks_exact(self.output_dim)
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q
    }

    /// Plant states `x_t`, if recorded.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.state_dim.max(1))
    }

    /// `q_t` recomputed from the stored residuals.
    pub fn recompute_q(&self, sys: &LtiSystem) -> Vec<f64> {
        self.residuals()
            .map(|r| sys.detection_measure(&DVector::from_column_slice(r)))
            .collect()
    }

    /// CSV with header `t, r_1, .., r_p, q`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.output_dim).map(|i| format!("r_{i}")).collect();
        writeln!(out, "t, {}, q", header.join(", "))?;
        for (t, (r, q)) in self.residuals().zip(&self.q).enumerate() {
            let cols: Vec<String> = r.iter().map(|v| format_float(*v)).collect();
            writeln!(out, "{t}, {}, {}", cols.join(", "), format_float(*q))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub burn_in: usize,
    pub record_states: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            burn_in: BURN_IN,
            record_states: false,
        }
    }
}

/// Run `steps` recorded steps after the default burn-in, from zero state.
pub fn simulate(
    sys: &LtiSystem,
    noise_w: &NoiseModel,
    noise_v: &NoiseModel,
    steps: usize,
    attack: Option<&AttackPolicy>,
) -> Result<ResidualTrace> {
    simulate_with(sys, noise_w, noise_v, steps, attack, &SimOptions::default())
}

/// As [`simulate`]; the attack, if any, is active only on recorded steps.
pub fn simulate_with(
    sys: &LtiSystem,
    noise_w: &NoiseModel,
    noise_v: &NoiseModel,
    steps: usize,
    attack: Option<&AttackPolicy>,
    options: &SimOptions,
) -> Result<ResidualTrace> {
    if steps == 0 {
        return Err(Error::input("simulation needs at least one step"));
    }
    let (n, p) = (sys.state_dim(), sys.output_dim());
    if noise_w.dim() != n || noise_v.dim() != p {
        return Err(Error::dimension(format!(
            "noise dimensions ({}, {}) do not match the system ({n}, {p})",
            noise_w.dim(),
            noise_v.dim()
        )));
    }
    if let Some(policy) = attack {
        policy.check_output_dim(p)?;
    }

    let mut w_src = noise_w.sampler(0);
    let mut v_src = noise_v.sampler(1);
    let (a, b, c, k, l) = (sys.a(), sys.b(), sys.c(), sys.k(), sys.gain());

    let mut x = DVector::zeros(n);
    let mut xh = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let mut v = DVector::zeros(p);
    let mut y = DVector::zeros(p);
    let mut r = DVector::zeros(p);
    let mut u = DVector::zeros(sys.input_dim());
    let mut x_next = DVector::zeros(n);
    let mut xh_next = DVector::zeros(n);

    let mut trace = ResidualTrace {
        output_dim: p,
        residuals: Vec::with_capacity(steps * p),
        q: Vec::with_capacity(steps),
        state_dim: n,
        states: Vec::with_capacity(if options.record_states { steps * n } else { 0 }),
    };

    for t in 0..options.burn_in + steps {
        let recording = t >= options.burn_in;
        w_src.sample_into(&mut w);
        v_src.sample_into(&mut v);

        y.gemv(1.0, c, &x, 0.0);
        y += &v;
        if let (true, Some(policy)) = (recording, attack) {
            let e = &x - &xh;
            y += zero_alarm_attack(
                sys,
                policy.alpha,
                &e,
                &v,
                &policy.delta_bar(t - options.burn_in, p),
            )?;
        }
        r.copy_from(&y);
        r.gemv(-1.0, c, &xh, 1.0);

        if recording {
            trace.residuals.extend(r.iter());
            trace.q.push(sys.detection_measure(&r));
            if options.record_states {
                trace.states.extend(x.iter());
            }
        }

        u.gemv(1.0, k, &xh, 0.0);
        x_next.gemv(1.0, a, &x, 0.0);
        x_next.gemv(1.0, b, &u, 1.0);
        x_next += &w;
        xh_next.gemv(1.0, a, &xh, 0.0);
        xh_next.gemv(1.0, b, &u, 1.0);
        xh_next.gemv(1.0, l, &r, 1.0);
        std::mem::swap(&mut x, &mut x_next);
        std::mem::swap(&mut xh, &mut xh_next);

        let size = x.amax();
        if !(size <= DIVERGENCE_LIMIT) {
            return Err(Error::Unstable(format!(
                "state norm exceeded {DIVERGENCE_LIMIT:e} at step {t}"
            )));
        }
    }
    Ok(trace)
}

/// Fraction of steps with `q_t > alpha`; zero for an empty trace.
pub fn empirical_false_alarm_rate(trace: &ResidualTrace, alpha: f64) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    alarm_count(trace.q_values(), alpha) as f64 / trace.len() as f64
}

pub fn alarm_count(q: &[f64], alpha: f64) -> usize {
    q.iter().filter(|&&v| v > alpha).count()
}

/// `√(rate (1 − rate) / trials)`.
pub fn binomial_standard_error(rate: f64, trials: usize) -> f64 {
    if trials == 0 {
        return f64::NAN;
    }
    (rate * (1.0 - rate) / trials as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;
    use crate::reach::AttackDirection;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat())
    }

    fn example_system(sv: f64) -> LtiSystem {
        LtiSystem::new(
            mat(&[&[0.84, 0.23], &[-0.47, 0.12]]),
            mat(&[&[0.07, -0.32], &[0.23, 0.58]]),
            mat(&[&[1.0, 0.0], &[2.0, 1.0]]),
            mat(&[&[1.404, -1.402], &[1.842, 1.008]]),
            mat(&[&[0.0225, -0.0055], &[-0.0055, 0.0100]]),
            DMatrix::identity(2, 2) * sv,
        )
        .unwrap()
    }

    fn noise(sys: &LtiSystem, family: NoiseFamily, seed: u64) -> (NoiseModel, NoiseModel) {
        (
            NoiseModel::new(family, sys.sigma_w().clone(), seed).unwrap(),
            NoiseModel::new(family, sys.sigma_v().clone(), seed).unwrap(),
        )
    }

    #[test]
    fn static_plant_is_one_step() {
        let q = mat(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let r = mat(&[&[1.0, 0.0], &[0.0, 3.0]]);
        let sol = solve_dare(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), &q, &r).unwrap();
        assert!(rel_frobenius(&sol.p, &q) < 1e-14);
        let expected = &q * (&q + &r).try_inverse().unwrap();
        assert!(rel_frobenius(&sol.filter_gain, &expected) < 1e-12);
        assert_eq!(sol.gain.amax(), 0.0);
    }

    #[test]
    fn riccati_fixed_point_holds() {
        let sys = example_system(1.0);
        let (a, c, p) = (sys.a(), sys.c(), sys.p());
        let s = c * p * c.transpose() + sys.sigma_v();
        let rhs =
            a * (p - p * c.transpose() * s.clone().try_inverse().unwrap() * c * p) * a.transpose()
                + sys.sigma_w();
        assert!(rel_frobenius(p, &rhs) < 1e-9);
        assert!(rel_frobenius(sys.sigma_r(), &s) < 1e-12);
        assert!(min_eigenvalue(sys.sigma_r()) > 0.0);
    }

    #[test]
    fn reference_gain_needs_unit_measurement_noise() {
        let reference = mat(&[&[0.0276, 0.0448], &[-0.01998, -0.0290]]);
        let unit = example_system(1.0);
        assert!((unit.gain() - &reference).amax() < 2e-3);
        // With 6 I neither gain form matches.
        let six = example_system(6.0);
        assert!((six.gain() - &reference).amax() > 2e-2);
        assert!((six.filter_gain() - &reference).amax() > 2e-2);
    }

    #[test]
    fn noiseless_limit() {
        let a = mat(&[&[0.5, 0.1], &[0.0, 0.3]]);
        let c = mat(&[&[1.0, 0.0]]);
        let r = DMatrix::identity(1, 1);
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-4, 1e-8] {
            let sol = solve_dare(&a, &c, &(DMatrix::identity(2, 2) * eps), &r).unwrap();
            assert!(sol.p.amax() < prev);
            assert!(sol.p.amax() < 10.0 * eps);
            assert!(sol.gain.amax() < 10.0 * eps);
            prev = sol.p.amax();
        }
        let zero = solve_dare(&a, &c, &DMatrix::zeros(2, 2), &r).unwrap();
        assert_eq!(zero.p.amax(), 0.0);
    }

    #[test]
    fn undetectable_plant_rejected() {
        let a = mat(&[&[1.2, 0.0], &[0.0, 0.5]]);
        let c = mat(&[&[0.0, 1.0]]);
        assert!(!is_detectable(&a, &c));
        assert!(matches!(
            solve_dare(&a, &c, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)),
            Err(Error::Numerical(_))
        ));
        let err = LtiSystem::new(
            a,
            DMatrix::identity(2, 2),
            c,
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        );
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn pbh_tests() {
        let a = mat(&[&[1.5, 1.0], &[0.0, 0.2]]);
        assert!(is_detectable(&a, &mat(&[&[1.0, 0.0]])));
        assert!(is_stabilizable(&a, &mat(&[&[0.0], &[1.0]])));
        let diag = mat(&[&[1.5, 0.0], &[0.0, 0.2]]);
        assert!(!is_stabilizable(&diag, &mat(&[&[0.0], &[1.0]])));
        assert!(!is_detectable(&diag, &mat(&[&[0.0, 1.0]])));
        let rot = mat(&[&[0.0, -1.1], &[1.1, 0.0]]);
        assert!(!is_stabilizable(&rot, &DMatrix::zeros(2, 1)));
        assert!(is_stabilizable(&rot, &mat(&[&[1.0], &[0.0]])));
    }

    #[test]
    fn construction_checks() {
        let sys = example_system(1.0);
        let bad_k = LtiSystem::new(
            sys.a().clone(),
            sys.b().clone(),
            sys.c().clone(),
            DMatrix::zeros(3, 2),
            sys.sigma_w().clone(),
            sys.sigma_v().clone(),
        );
        assert!(matches!(bad_k, Err(Error::Dimension(_))));
        let unstable = LtiSystem::new(
            sys.a().clone(),
            sys.b().clone(),
            sys.c().clone(),
            sys.k() * 10.0,
            sys.sigma_w().clone(),
            sys.sigma_v().clone(),
        );
        assert!(matches!(unstable, Err(Error::Unstable(_))));
        let singular_v = LtiSystem::new(
            sys.a().clone(),
            sys.b().clone(),
            sys.c().clone(),
            sys.k().clone(),
            sys.sigma_w().clone(),
            DMatrix::zeros(2, 2),
        );
        assert!(matches!(singular_v, Err(Error::Domain(_))));
        assert!(spectral_radius(&sys.closed_loop()) < 1.0);
        assert!(spectral_radius(&sys.estimator_error_map()) < 1.0);
    }

    #[test]
    fn zero_noise_gives_zero_residual() {
        let sys = example_system(1.0);
        let zw = NoiseModel::new(NoiseFamily::Gaussian, DMatrix::zeros(2, 2), 1).unwrap();
        let zv = NoiseModel::new(NoiseFamily::Gaussian, DMatrix::zeros(2, 2), 1).unwrap();
        let trace = simulate(&sys, &zw, &zv, 100, None).unwrap();
        assert!(trace.q_values().iter().all(|&q| q == 0.0));
        assert!(trace.residuals().flatten().all(|&r| r == 0.0));
        assert_eq!(empirical_false_alarm_rate(&trace, 0.0), 0.0);
    }

    #[test]
    fn gaussian_residual_statistics() {
        let sys = example_system(1.0);
        let (nw, nv) = noise(&sys, NoiseFamily::Gaussian, 7);
        let steps = 200_000;
        let trace = simulate(&sys, &nw, &nv, steps, None).unwrap();
        let mean_q = trace.q_values().iter().sum::<f64>() / steps as f64;
        assert!((mean_q - 2.0).abs() < 0.03, "{mean_q}");
        let mut cov = DMatrix::zeros(2, 2);
        for r in trace.residuals() {
            let r = DVector::from_column_slice(r);
            cov += &r * r.transpose();
        }
        cov /= steps as f64;
        assert!(rel_frobenius(&cov, sys.sigma_r()) < 0.02);
        assert_eq!(empirical_false_alarm_rate(&trace, 0.0), 1.0);
    }

    #[test]
    fn residuals_are_white() {
        let sys = example_system(1.0);
        for seed in [3, 11] {
            let (nw, nv) = noise(&sys, NoiseFamily::Gaussian, seed);
            let steps = 100_000;
            let trace = simulate(&sys, &nw, &nv, steps, None).unwrap();
            // whitened residuals should be uncorrelated across time
            let root_inv = sys.sigma_r_sqrt().clone().try_inverse().unwrap();
            let z: Vec<DVector<f64>> = trace
                .residuals()
                .map(|r| &root_inv * DVector::from_column_slice(r))
                .collect();
            for lag in 1..=3 {
                for i in 0..2 {
                    let acf = z[lag..]
                        .iter()
                        .zip(&z)
                        .map(|(a, b)| a[i] * b[i])
                        .sum::<f64>()
                        / steps as f64;
                    assert!(
                        acf.abs() < 3.0 / (steps as f64).sqrt(),
                        "seed {seed} lag {lag} coord {i}: {acf}"
                    );
                }
            }
        }
    }

    #[test]
    fn laplacian_is_heavy_tailed() {
        let cov = mat(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let model = NoiseModel::new(NoiseFamily::MultivariateLaplacian, cov.clone(), 5).unwrap();
        let mut s = model.sampler(0);
        let n = 200_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| s.sample()).collect();
        let mut sample_cov = DMatrix::zeros(2, 2);
        for d in &draws {
            sample_cov += d * d.transpose();
        }
        sample_cov /= n as f64;
        assert!(rel_frobenius(&sample_cov, &cov) < 0.02);
        for i in 0..2 {
            let m2 = draws.iter().map(|d| d[i].powi(2)).sum::<f64>() / n as f64;
            let m4 = draws.iter().map(|d| d[i].powi(4)).sum::<f64>() / n as f64;
            // scale mixture kurtosis is 3 E[E²] = 6
            let kurt = m4 / (m2 * m2);
            assert!(kurt > 3.0 && (kurt - 6.0).abs() < 0.5, "{kurt}");
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let model = NoiseModel::new(NoiseFamily::Gaussian, DMatrix::identity(2, 2), 9).unwrap();
        let a: Vec<_> = (0..5)
            .map({
                let mut s = model.sampler(0);
                move |_| s.sample()
            })
            .collect();
        let mut s = model.sampler(0);
        let b: Vec<_> = (0..5).map(|_| s.sample()).collect();
        assert_eq!(a, b);
        let mut other = model.sampler(1);
        assert_ne!(a[0], other.sample());
    }

    #[test]
    fn zero_alarm_attack_never_alarms() {
        let sys = example_system(1.0);
        let (nw, nv) = noise(&sys, NoiseFamily::Gaussian, 21);
        for alpha in [40.0, 10.7178, 9.1315, 5.9915] {
            let policy = AttackPolicy::zero_alarm(alpha, AttackDirection::Rotating { period: 37 });
            let trace = simulate(&sys, &nw, &nv, 10_000, Some(&policy)).unwrap();
            assert_eq!(alarm_count(trace.q_values(), alpha), 0);
            assert!(trace.q_values().iter().all(|&q| q > 0.99 * alpha));
        }
    }

    #[test]
    fn csv_layout() {
        let sys = example_system(1.0);
        let (nw, nv) = noise(&sys, NoiseFamily::Gaussian, 1);
        let trace = simulate(&sys, &nw, &nv, 3, None).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t, r_1, r_2, q");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("2, "));
        assert_eq!(lines[1].split(", ").count(), 4);
    }

    #[test]
    fn divergence_detected() {
        let sys = example_system(1.0);
        let huge =
            NoiseModel::new(NoiseFamily::Gaussian, DMatrix::identity(2, 2) * 1e30, 0).unwrap();
        let (_, nv) = noise(&sys, NoiseFamily::Gaussian, 0);
        assert!(matches!(
            simulate(&sys, &huge, &nv, 10, None),
            Err(Error::Unstable(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn q_recomputes_from_residuals(seed in any::<u64>(), laplace in any::<bool>()) {
            let sys = example_system(1.0);
            let family = if laplace { NoiseFamily::MultivariateLaplacian } else { NoiseFamily::Gaussian };
            let (nw, nv) = noise(&sys, family, seed);
            let trace = simulate(&sys, &nw, &nv, 500, None).unwrap();
            prop_assert_eq!(trace.len(), 500);
            for (q, q2) in trace.q_values().iter().zip(trace.recompute_q(&sys)) {
                prop_assert!(*q >= 0.0);
                prop_assert!((q - q2).abs() <= 1e-12 * q.max(1.0));
            }
        }

        #[test]
        fn same_seed_same_trace(seed in any::<u64>()) {
            let sys = example_system(1.0);
            let (nw, nv) = noise(&sys, NoiseFamily::MultivariateLaplacian, seed);
            let a = simulate(&sys, &nw, &nv, 200, None).unwrap();
            let b = simulate(&sys, &nw, &nv, 200, None).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn false_alarm_rate_is_monotone(seed in any::<u64>(), a1 in 0.0f64..20.0, a2 in 0.0f64..20.0) {
            let sys = example_system(1.0);
            let (nw, nv) = noise(&sys, NoiseFamily::Gaussian, seed);
            let trace = simulate(&sys, &nw, &nv, 500, None).unwrap();
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(empirical_false_alarm_rate(&trace, lo) >= empirical_false_alarm_rate(&trace, hi));
        }
    }
}
