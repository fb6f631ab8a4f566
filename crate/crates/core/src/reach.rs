//! Zero-alarm sensor attacks and ellipsoidal outer bounds on the states they
//! can reach.
//!
//! Under the attack `δ_t = −C e_t − v_t + Σ_r^{1/2} δ̄_t` the residual is
//! exactly `Σ_r^{1/2} δ̄_t`, so the estimate moves as `x̂_{t+1} = A_cl x̂_t +
//! LΣ_r^{1/2}δ̄_t` while the error picks up `e_{t+1} = A e_t + w_t −
//! LΣ_r^{1/2}δ̄_t`. The state after `t` steps is therefore a sum of
//! `Aⁱ w` and `H_i L Σ_r^{1/2} δ̄` terms with `H_i = A_clⁱ − Aⁱ`,
//! `A_cl = A + BK`, and lies in the Minkowski sum
//!
//! ```text
//! ⊕_{i=0}^{t−2} 𝓔(w̄ Aⁱ Σ_w Aⁱᵀ) ⊕ 𝓔(α H_i L Σ_r Lᵀ H_iᵀ).
//! ```

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, min_eigenvalue, spectral_radius, symmetrize};
use crate::moments::format_float;
use crate::sim::LtiSystem;

/// Below this `ℓᵀQℓ` an ellipsoid is flat in direction `ℓ`.
pub const FLAT_TOL: f64 = 1e-14;
/// Seed for direction sampling (`n > 2`) and Monte-Carlo volumes.
pub const GEOMETRY_SEED: u64 = 0x5eed;
pub const MONTE_CARLO_SAMPLES: usize = 200_000;
/// Shrinks `√α δ̄` slightly so round-off in the plant cannot push `q` over `α`.
pub const ATTACK_MARGIN: f64 = 1.0 - 1e-9;

/// `{Q^{1/2} u : ‖u‖ ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>) -> Result<Self> {
        if shape.nrows() != shape.ncols() {
            return Err(Error::dimension("ellipsoid shape must be square"));
        }
        let scale = max_abs(&shape).max(f64::MIN_POSITIVE);
        if (&shape - shape.transpose()).amax() > 1e-9 * scale {
            return Err(Error::domain("ellipsoid shape must be symmetric"));
        }
        let shape = symmetrize(&shape);
        if shape.nrows() > 0 && min_eigenvalue(&shape) < -1e-10 * scale {
            return Err(Error::domain(
                "ellipsoid shape must be positive semidefinite",
            ));
        }
        Ok(Self { shape })
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    fn spread(&self, l: &DVector<f64>) -> f64 {
        l.dot(&(&self.shape * l)).max(0.0)
    }

    /// `h(ℓ) = √(ℓᵀQℓ)`.
    pub fn support(&self, l: &DVector<f64>) -> f64 {
        self.spread(l).sqrt()
    }

    /// The boundary point `Qℓ/√(ℓᵀQℓ)` where `ℓ` is an outward normal; the
    /// origin when the ellipsoid is flat along `ℓ`.
    pub fn maximizer(&self, l: &DVector<f64>) -> DVector<f64> {
        let s = self.spread(l);
        if s < FLAT_TOL {
            return DVector::zeros(self.dim());
        }
        &self.shape * l / s.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackDirection {
    /// `δ̄_t` along a fixed unit vector (normalized on use).
    Fixed(DVector<f64>),
    /// `δ̄_t` turning through the first two output coordinates once per
    /// `period` steps; with one output it flips sign instead.
    Rotating { period: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    ZeroAlarm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackPolicy {
    pub alpha: f64,
    pub mode: AttackMode,
    pub direction: AttackDirection,
    /// `‖δ̄_t‖ = margin · √α`.
    pub margin: f64,
}

impl AttackPolicy {
    pub fn zero_alarm(alpha: f64, direction: AttackDirection) -> Self {
        Self {
            alpha,
            mode: AttackMode::ZeroAlarm,
            direction,
            margin: ATTACK_MARGIN,
        }
    }

    pub(crate) fn check_output_dim(&self, p: usize) -> Result<()> {
        if let AttackDirection::Fixed(d) = &self.direction {
            if d.len() != p {
                return Err(Error::dimension(format!(
                    "attack direction has {} entries, expected {p}",
                    d.len()
                )));
            }
            if !(d.norm() > 0.0) {
                return Err(Error::domain("attack direction must be non-zero"));
            }
        }
        if let AttackDirection::Rotating { period: 0 } = self.direction {
            return Err(Error::domain("rotation period must be positive"));
        }
        if !(self.alpha >= 0.0) || !(0.0..=1.0).contains(&self.margin) {
            return Err(Error::domain(
                "attack needs alpha >= 0 and margin in [0, 1]",
            ));
        }
        Ok(())
    }

    /// The normalized attack `δ̄_t ∈ ℝᵖ`, with `δ̄_tᵀδ̄_t ≤ α`.
    pub fn delta_bar(&self, t: usize, p: usize) -> DVector<f64> {
        let radius = self.margin * self.alpha.max(0.0).sqrt();
        match &self.direction {
            AttackDirection::Fixed(d) => d * (radius / d.norm()),
            AttackDirection::Rotating { period } => {
                let mut out = DVector::zeros(p);
                if p == 1 {
                    out[0] = if t.is_multiple_of(2) { radius } else { -radius };
                } else {
                    let theta = 2.0 * PI * (t % period) as f64 / *period as f64;
                    out[0] = radius * theta.cos();
                    out[1] = radius * theta.sin();
                }
                out
            }
        }
    }
}

/// `δ_t = −C e_t − v_t + Σ_r^{1/2} δ̄_t`, which forces `r_t = Σ_r^{1/2} δ̄_t`
/// and `q_t = δ̄_tᵀδ̄_t`.
pub fn zero_alarm_attack(
    sys: &LtiSystem,
    alpha: f64,
    e: &DVector<f64>,
    v: &DVector<f64>,
    delta_bar: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = sys.output_dim();
    if e.len() != sys.state_dim() || v.len() != p || delta_bar.len() != p {
        return Err(Error::dimension(
            "attack inputs do not match the system dimensions",
        ));
    }
    let energy = delta_bar.norm_squared();
    if energy > alpha {
        return Err(Error::domain(format!(
            "attack contract violated: |delta_bar|^2 = {energy} exceeds alpha = {alpha}"
        )));
    }
    Ok(sys.sigma_r_sqrt() * delta_bar - sys.c() * e - v)
}

/// `w̄ = n / rate`, the two-moment bound applied to the `n`-dimensional
/// normalized process noise.
pub fn noise_threshold(n: usize, rate: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("noise dimension must be at least 1"));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::domain(format!(
            "rate must lie in (0, 1), got {rate}"
        )));
    }
    Ok(n as f64 / rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeMethod {
    /// Interval length (`n = 1`).
    Exact,
    /// Polygon through the boundary samples (`n = 2`).
    Shoelace,
    /// Hit-or-miss inside the bounding box against the sampled supporting
    /// half-spaces (`n > 2`).
    MonteCarlo { samples: usize },
}

/// Ellipsoidal outer bound on the attack-reachable set at horizon `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachBound {
    pub horizon: usize,
    pub w_bar: f64,
    pub alpha: f64,
    /// `w̄ AⁱΣ_wAⁱᵀ`, `i = 0..t−2`.
    pub noise_shapes: Vec<Ellipsoid>,
    /// `α H_i L Σ_r Lᵀ H_iᵀ`, `i = 0..t−2`.
    pub attack_shapes: Vec<Ellipsoid>,
    pub directions: Vec<DVector<f64>>,
    /// `h_sum(ℓ)` per direction.
    pub support: Vec<f64>,
    pub boundary: Vec<DVector<f64>>,
    /// Area for `n = 2`, length for `n = 1`, volume proxy otherwise.
    pub volume: f64,
    pub volume_method: VolumeMethod,
    /// Upper bound on how much any support value grows past the horizon.
    pub truncation_bound: f64,
    /// Every shape matrix vanished; the bound is the origin.
    pub degenerate: bool,
}

impl ReachBound {
    pub fn state_dim(&self) -> usize {
        self.directions.first().map_or(0, |d| d.len())
    }

    pub fn shapes(&self) -> impl Iterator<Item = &Ellipsoid> {
        self.noise_shapes.iter().chain(&self.attack_shapes)
    }

    /// `Σᵢ √(ℓᵀQᵢℓ)`.
    pub fn support_at(&self, l: &DVector<f64>) -> f64 {
        self.shapes().map(|e| e.support(l)).sum()
    }

    /// Area for `n = 2`.
    pub fn area(&self) -> Option<f64> {
        (self.state_dim() == 2).then_some(self.volume)
    }

    /// Boundary CSV `theta, x1, x2` (planar systems only).
    pub fn write_boundary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if self.state_dim() != 2 {
            return Err(Error::dimension("boundary export needs a planar state"));
        }
        writeln!(out, "theta, x1, x2")?;
        for (d, x) in self.directions.iter().zip(&self.boundary) {
            let theta = d[1].atan2(d[0]).rem_euclid(2.0 * PI);
            writeln!(
                out,
                "{}, {}, {}",
                format_float(theta),
                format_float(x[0]),
                format_float(x[1])
            )?;
        }
        Ok(())
    }
}

/// Unit directions: uniform angles for `n = 2`, `±1` for `n = 1`, seeded
/// uniform draws on the sphere otherwise.
pub fn sample_directions(n: usize, count: usize) -> Vec<DVector<f64>> {
    match n {
        1 => vec![
            DVector::from_element(1, 1.0),
            DVector::from_element(1, -1.0),
        ],
        2 => (0..count)
            .map(|j| {
                let theta = 2.0 * PI * j as f64 / count as f64;
                DVector::from_vec(vec![theta.cos(), theta.sin()])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(GEOMETRY_SEED);
            (0..count)
                .map(|_| loop {
                    let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let norm = g.norm();
                    if norm > 1e-12 {
                        break g / norm;
                    }
                })
                .collect()
        }
    }
}

fn shoelace(points: &[DVector<f64>]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (&points[i], &points[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Hit-or-miss estimate of `{x : ℓᵀx ≤ h(ℓ) for all sampled ℓ}` within the
/// bounding box `[lo, hi]`, whose faces are exact supporting planes.
fn monte_carlo_volume(
    directions: &[DVector<f64>],
    support: &[f64],
    lo: &[f64],
    hi: &[f64],
    samples: usize,
) -> f64 {
    let n = lo.len();
    let box_volume: f64 = hi.iter().zip(lo).map(|(h, l)| h - l).product();
    if box_volume <= 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(GEOMETRY_SEED ^ 1);
    let hits = (0..samples)
        .filter(|_| {
            let x = DVector::from_fn(n, |i, _| rng.random_range(lo[i]..=hi[i]));
            directions.iter().zip(support).all(|(d, h)| d.dot(&x) <= *h)
        })
        .count();
    box_volume * hits as f64 / samples as f64
}

/// Outer bound on the states reachable after `t` steps of zero-alarm attack
/// with threshold `alpha` and noise level `w_bar`.
pub fn reach_bound(
    sys: &LtiSystem,
    w_bar: f64,
    alpha: f64,
    t: usize,
    n_dirs: usize,
) -> Result<ReachBound> {
    if t < 2 {
        return Err(Error::domain("reach horizon must be at least 2"));
    }
    if n_dirs < 16 {
        return Err(Error::domain("need at least 16 directions"));
    }
    if !(w_bar >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::domain("w_bar and alpha must be non-negative"));
    }
    let n = sys.state_dim();
    let a = sys.a();
    let a_cl = sys.closed_loop();
    let rho_a = spectral_radius(a);
    let rho_cl = spectral_radius(&a_cl);
    if rho_a >= 1.0 || rho_cl >= 1.0 {
        return Err(Error::Unstable(format!(
            "reach bound needs stable A and A + BK (spectral radii {rho_a}, {rho_cl})"
        )));
    }

    let injected = sys.gain() * sys.sigma_r() * sys.gain().transpose();
    let mut a_pow = DMatrix::identity(n, n);
    let mut cl_pow = DMatrix::identity(n, n);
    let mut noise_shapes = Vec::with_capacity(t - 1);
    let mut attack_shapes = Vec::with_capacity(t - 1);
    let term = |a_pow: &DMatrix<f64>, cl_pow: &DMatrix<f64>| {
        let h = cl_pow - a_pow;
        (
            a_pow * sys.sigma_w() * a_pow.transpose() * w_bar,
            &h * &injected * h.transpose() * alpha,
        )
    };
    for _ in 0..t - 1 {
        let (qw, qa) = term(&a_pow, &cl_pow);
        noise_shapes.push(Ellipsoid::new(symmetrize(&qw))?);
        attack_shapes.push(Ellipsoid::new(symmetrize(&qa))?);
        a_pow = a * a_pow;
        cl_pow = &a_cl * cl_pow;
    }

    // Tail of the series past the horizon, bounded by spectral norms.
    let mut truncation_bound = 0.0;
    for _ in 0..100_000 {
        let (qw, qa) = term(&a_pow, &cl_pow);
        let step = qw.norm().sqrt() + qa.norm().sqrt();
        truncation_bound += step;
        if step <= 1e-15 * truncation_bound.max(1e-300) || step == 0.0 {
            break;
        }
        a_pow = a * a_pow;
        cl_pow = &a_cl * cl_pow;
    }

    let directions = sample_directions(n, n_dirs);
    let all: Vec<&Ellipsoid> = noise_shapes.iter().chain(&attack_shapes).collect();
    let degenerate = all.iter().all(|e| e.shape().amax() == 0.0);
    let support: Vec<f64> = directions
        .iter()
        .map(|l| all.iter().map(|e| e.support(l)).sum())
        .collect();
    let boundary: Vec<DVector<f64>> = directions
        .iter()
        .map(|l| {
            all.iter()
                .fold(DVector::zeros(n), |acc, e| acc + e.maximizer(l))
        })
        .collect();

    let (volume, volume_method) = if degenerate {
        (0.0, VolumeMethod::Exact)
    } else {
        match n {
            1 => (support[0] + support[1], VolumeMethod::Exact),
            2 => (shoelace(&boundary), VolumeMethod::Shoelace),
            _ => {
                let axis = |i: usize, sign: f64| {
                    let e = DVector::from_fn(n, |j, _| if i == j { sign } else { 0.0 });
                    all.iter().map(|q| q.support(&e)).sum::<f64>()
                };
                let hi: Vec<f64> = (0..n).map(|i| axis(i, 1.0)).collect();
                let lo: Vec<f64> = (0..n).map(|i| -axis(i, -1.0)).collect();
                (
                    monte_carlo_volume(&directions, &support, &lo, &hi, MONTE_CARLO_SAMPLES),
                    VolumeMethod::MonteCarlo {
                        samples: MONTE_CARLO_SAMPLES,
                    },
                )
            }
        }
    };

    Ok(ReachBound {
        horizon: t,
        w_bar,
        alpha,
        noise_shapes,
        attack_shapes,
        directions,
        support,
        boundary,
        volume,
        volume_method,
        truncation_bound,
        degenerate,
    })
}

/// Pairwise support-function comparison between two bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dominance {
    pub larger_alpha: f64,
    pub smaller_alpha: f64,
    /// `min_ℓ h_larger(ℓ) − h_smaller(ℓ)`.
    pub min_margin: f64,
    pub dominates: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeReport {
    /// `(alpha, volume)` sorted by decreasing alpha.
    pub volumes: Vec<(f64, f64)>,
    /// Volume never increases as alpha decreases.
    pub monotone: bool,
    /// Volume strictly decreases between distinct thresholds.
    pub strictly_decreasing: bool,
    /// One entry per pair with the larger threshold first.
    pub dominance: Vec<Dominance>,
}

impl VolumeReport {
    /// Monotone volumes and support dominance for every pair.
    pub fn nested(&self) -> bool {
        self.monotone && self.dominance.iter().all(|d| d.dominates)
    }

    /// CSV `alpha, volume` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "alpha, area")?;
        for (alpha, v) in &self.volumes {
            writeln!(out, "{}, {}", format_float(*alpha), format_float(*v))?;
        }
        Ok(())
    }
}

/// Check that larger thresholds give larger reach bounds, by volume and
/// direction by direction.
pub fn volume_comparison(bounds: &[ReachBound]) -> Result<VolumeReport> {
    let first = bounds
        .first()
        .ok_or_else(|| Error::input("no bounds to compare"))?;
    for b in bounds {
        if b.horizon != first.horizon || b.w_bar != first.w_bar || b.directions != first.directions
        {
            return Err(Error::input(
                "bounds must share horizon, noise level and direction set",
            ));
        }
    }
    let mut order: Vec<&ReachBound> = bounds.iter().collect();
    order.sort_by(|a, b| b.alpha.total_cmp(&a.alpha));

    let vol_tol = |v: f64| 1e-12 * v.abs().max(1.0);
    let monotone = order
        .windows(2)
        .all(|w| w[0].volume + vol_tol(w[0].volume) >= w[1].volume);
    let strictly_decreasing = order
        .windows(2)
        .filter(|w| w[0].alpha > w[1].alpha)
        .all(|w| w[0].volume > w[1].volume);

    let mut dominance = Vec::new();
    for (i, big) in order.iter().enumerate() {
        for small in &order[i + 1..] {
            let min_margin = big
                .support
                .iter()
                .zip(&small.support)
                .map(|(h1, h2)| h1 - h2)
                .fold(f64::INFINITY, f64::min);
            let scale = big.support.iter().cloned().fold(0.0, f64::max).max(1.0);
            dominance.push(Dominance {
                larger_alpha: big.alpha,
                smaller_alpha: small.alpha,
                min_margin,
                dominates: min_margin >= -1e-12 * scale,
            });
        }
    }
    Ok(VolumeReport {
        volumes: order.iter().map(|b| (b.alpha, b.volume)).collect(),
        monotone,
        strictly_decreasing,
        dominance,
    })
}
