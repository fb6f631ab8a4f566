#![allow(dead_code)]

use drtune::moments::MomentSequence;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Raw moments `M_0..M_k` of a finite mixture of gamma laws
/// `(weight, shape, scale)`: `E[X^r] = θ^r a (a+1) ... (a+r-1)`.
pub fn gamma_mixture_moments(parts: &[(f64, f64, f64)], k: usize) -> MomentSequence {
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let m = (0..=k)
        .map(|r| {
            if r == 0 {
                return 1.0;
            }
            parts
                .iter()
                .map(|&(w, a, theta)| {
                    let rising: f64 = (0..r).map(|i| a + i as f64).product();
                    w / total * theta.powi(r as i32) * rising
                })
                .sum()
        })
        .collect();
    MomentSequence::new(m).unwrap()
}

/// Raw moments of an atomic law `(location, weight)`.
pub fn atomic_moments(atoms: &[(f64, f64)], k: usize) -> MomentSequence {
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    let m = (0..=k)
        .map(|r| match r {
            0 => 1.0,
            _ => atoms
                .iter()
                .map(|&(x, w)| w / total * x.powi(r as i32))
                .sum(),
        })
        .collect();
    MomentSequence::new(m).unwrap()
}

/// A random strictly feasible sequence of order `k`: a gamma mixture, or
/// a law on at least three atoms.
pub fn random_moments(rng: &mut ChaCha8Rng, k: usize) -> MomentSequence {
    if rng.random_bool(0.7) {
        let parts: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=3))
            .map(|_| {
                (
                    rng.random_range(0.1..1.0),
                    rng.random_range(0.5..6.0),
                    rng.random_range(0.2..4.0),
                )
            })
            .collect();
        gamma_mixture_moments(&parts, k)
    } else {
        let atoms: Vec<(f64, f64)> = (0..rng.random_range(3..=6))
            .map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.05..1.0)))
            .collect();
        atomic_moments(&atoms, k)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat())
}

pub fn reference_gain() -> DMatrix<f64> {
    mat(&[&[0.0276, 0.0448], &[-0.01998, -0.0290]])
}

pub fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}
