//! Dense primal-dual interior-point method for small block-diagonal SDPs.
//!
//! Standard form:
//!
//! ```text
//! (P)  min ⟨C, S⟩   s.t. ⟨A_i, S⟩ = b_i,  S ⪰ 0
//! (D)  max bᵀw      s.t. Σ w_i A_i + Z = C,  Z ⪰ 0
//! ```
//!
//! Infeasible-start path following with Nesterov-Todd scaling and a Mehrotra
//! predictor-corrector. With `S = LLᵀ` and `LᵀZL = U D Uᵀ`, the scaling matrix
//! `G = L U D^{-1/4}` maps both iterates to the same diagonal `Λ = D^{1/2}`
//! (`G⁻¹ S G⁻ᵀ = Gᵀ Z G = Λ`), and `W = G Gᵀ` satisfies `W Z W = S`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

pub(crate) type BlockMat = Vec<DMatrix<f64>>;

#[derive(Debug, Clone)]
pub(crate) struct ConicProblem {
    pub c: BlockMat,
    pub a: Vec<BlockMat>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub tol: f64,
    /// An early stop whose residuals and complementarity are below
    /// `loose_tol` and whose objective gap is below `gap_tol` is reported as
    /// [`IpmStatus::Inaccurate`].
    pub loose_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            loose_tol: 1e-5,
            gap_tol: 1e-3,
            max_iter: 150,
            step_fraction: 0.98,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Optimal,
    /// Stopped early close to optimal, typically because the primal
    /// optimum is not attained.
    Inaccurate,
    MaxIter,
    NumericalTrouble,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmResult {
    /// Primal blocks; only the dual side is read outside tests.
    #[cfg_attr(not(test), allow(dead_code))]
    pub s: BlockMat,
    pub w: DVector<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub status: IpmStatus,
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn norm(a: &[DMatrix<f64>]) -> f64 {
    inner(a, a).sqrt()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

struct Scaling {
    /// `G` per block.
    g: DMatrix<f64>,
    /// `G⁻¹` per block.
    g_inv: DMatrix<f64>,
    /// Diagonal of `Λ`.
    lambda: DVector<f64>,
    /// `W = G Gᵀ`.
    w: DMatrix<f64>,
    chol_s: DMatrix<f64>,
}

fn nt_scaling(s: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
    let l = Cholesky::new(s.clone())?.l();
    let ltzl = sym(l.transpose() * z * &l);
    let eig = SymmetricEigen::new(ltzl);
    if eig.eigenvalues.iter().any(|d| !(*d > 0.0)) {
        return None;
    }
    let d_m14 = eig.eigenvalues.map(|d| d.powf(-0.25));
    let d_p14 = eig.eigenvalues.map(|d| d.powf(0.25));
    let g = &l * &eig.eigenvectors * DMatrix::from_diagonal(&d_m14);
    let l_inv = l.clone().try_inverse()?;
    let g_inv = DMatrix::from_diagonal(&d_p14) * eig.eigenvectors.transpose() * l_inv;
    let w = sym(&g * g.transpose());
    Some(Scaling {
        g,
        g_inv,
        lambda: eig.eigenvalues.map(f64::sqrt),
        w,
        chol_s: l,
    })
}

/// Largest `t` with `M + t·dM ⪰ 0` given the Cholesky factor `L` of `M`.
fn max_step(l: &DMatrix<f64>, dm: &DMatrix<f64>) -> f64 {
    let Some(l_inv) = l.clone().try_inverse() else {
        return 0.0;
    };
    let t = sym(&l_inv * dm * l_inv.transpose());
    let min = SymmetricEigen::new(t)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

impl ConicProblem {
    fn a_op(&self, s: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(self.a.len(), self.a.iter().map(|ai| inner(ai, s)))
    }

    fn at_op(&self, w: &DVector<f64>) -> BlockMat {
        let mut out: BlockMat = self
            .c
            .iter()
            .map(|c| DMatrix::zeros(c.nrows(), c.ncols()))
            .collect();
        for (wi, ai) in w.iter().zip(&self.a) {
            for (o, a) in out.iter_mut().zip(ai) {
                *o += a * *wi;
            }
        }
        out
    }

    fn dimension(&self) -> usize {
        self.c.iter().map(|c| c.nrows()).sum()
    }

    pub fn solve(&self, settings: &IpmSettings, w0: DVector<f64>) -> IpmResult {
        let n = self.dimension() as f64;
        let m = self.a.len();
        let b_norm = self.b.norm();
        let c_norm = norm(&self.c);

        let a_norm_max = self.a.iter().map(|a| norm(a)).fold(0.0, f64::max);
        let gamma_p = (0..m)
            .map(|i| (1.0 + self.b[i].abs()) / (1.0 + norm(&self.a[i])))
            .fold(n.sqrt().max(10.0), f64::max);
        let gamma_d = n.sqrt().max(10.0).max(c_norm).max(a_norm_max);

        let mut s: BlockMat = self
            .c
            .iter()
            .map(|c| DMatrix::identity(c.nrows(), c.nrows()) * gamma_p)
            .collect();
        let mut z: BlockMat = self
            .c
            .iter()
            .map(|c| DMatrix::identity(c.nrows(), c.nrows()) * gamma_d)
            .collect();
        let mut w = w0;

        let mut status = IpmStatus::MaxIter;
        let mut iterations = 0;
        let mut stalls = 0;

        for iter in 0..settings.max_iter {
            iterations = iter;
            let rp = &self.b - self.a_op(&s);
            let atw = self.at_op(&w);
            let rd: BlockMat = self
                .c
                .iter()
                .zip(&z)
                .zip(&atw)
                .map(|((c, z), a)| c - z - a)
                .collect();
            let sz = inner(&s, &z);
            let mu = sz / n;
            let pobj = inner(&self.c, &s);
            let dobj = self.b.dot(&w);

            let rel_gap = sz.abs() / (1.0 + pobj.abs() + dobj.abs());
            let pinf = rp.norm() / (1.0 + b_norm);
            let dinf = norm(&rd) / (1.0 + c_norm);
            if rel_gap <= settings.tol && pinf <= settings.tol && dinf <= settings.tol {
                status = IpmStatus::Optimal;
                break;
            }

            let Some(scalings) = s
                .iter()
                .zip(&z)
                .map(|(s, z)| nt_scaling(s, z))
                .collect::<Option<Vec<_>>>()
            else {
                status = IpmStatus::NumericalTrouble;
                break;
            };

            // Schur complement M_ij = ⟨A_i, W A_j W⟩.
            let wa: Vec<BlockMat> = self
                .a
                .iter()
                .map(|aj| {
                    aj.iter()
                        .zip(&scalings)
                        .map(|(a, sc)| &sc.w * a * &sc.w)
                        .collect()
                })
                .collect();
            let mut schur = DMatrix::from_fn(m, m, |i, j| inner(&self.a[i], &wa[j]));
            schur = sym(schur);
            let Some(chol) = factor_schur(schur) else {
                status = IpmStatus::NumericalTrouble;
                break;
            };

            let w_rd_w: BlockMat = rd
                .iter()
                .zip(&scalings)
                .map(|(r, sc)| &sc.w * r * &sc.w)
                .collect();
            let direction = |rc: &BlockMat| -> (BlockMat, DVector<f64>, BlockMat) {
                let t: BlockMat = rc.iter().zip(&w_rd_w).map(|(a, b)| a - b).collect();
                let rhs = &rp - self.a_op(&t);
                let dw = chol.solve(&rhs);
                let atdw = self.at_op(&dw);
                let dz: BlockMat = rd.iter().zip(&atdw).map(|(r, a)| r - a).collect();
                let ds: BlockMat = rc
                    .iter()
                    .zip(&dz)
                    .zip(&scalings)
                    .map(|((r, d), sc)| sym(r - &sc.w * d * &sc.w))
                    .collect();
                (ds, dw, dz)
            };

            let chol_z: Option<Vec<DMatrix<f64>>> = z
                .iter()
                .map(|z| Cholesky::new(z.clone()).map(|c| c.l()))
                .collect();
            let Some(chol_z) = chol_z else {
                status = IpmStatus::NumericalTrouble;
                break;
            };
            let step_lengths = |ds: &BlockMat, dz: &BlockMat| -> (f64, f64) {
                let ap = scalings
                    .iter()
                    .zip(ds)
                    .map(|(sc, d)| max_step(&sc.chol_s, d))
                    .fold(f64::INFINITY, f64::min);
                let ad = chol_z
                    .iter()
                    .zip(dz)
                    .map(|(l, d)| max_step(l, d))
                    .fold(f64::INFINITY, f64::min);
                (ap, ad)
            };

            // Predictor (affine scaling).
            let rc_aff: BlockMat = s.iter().map(|s| -s.clone()).collect();
            let (ds_a, _, dz_a) = direction(&rc_aff);
            let (ap_a, ad_a) = step_lengths(&ds_a, &dz_a);
            let (ap_a, ad_a) = (ap_a.min(1.0), ad_a.min(1.0));
            let s_aff: BlockMat = s.iter().zip(&ds_a).map(|(s, d)| s + d * ap_a).collect();
            let z_aff: BlockMat = z.iter().zip(&dz_a).map(|(z, d)| z + d * ad_a).collect();
            let mu_aff = inner(&s_aff, &z_aff) / n;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // Corrector in the scaled space: Λ∘(ΔS̃ + ΔZ̃) = σμI − Λ² − ΔS̃ₐ∘ΔZ̃ₐ.
            let rc: BlockMat = scalings
                .iter()
                .zip(ds_a.iter().zip(&dz_a))
                .map(|(sc, (dsa, dza))| {
                    let ds_t = &sc.g_inv * dsa * sc.g_inv.transpose();
                    let dz_t = sc.g.transpose() * dza * &sc.g;
                    let second = sym(&ds_t * &dz_t);
                    let k = sc.lambda.len();
                    let t = DMatrix::from_fn(k, k, |i, j| {
                        let target = if i == j {
                            sigma * mu - sc.lambda[i] * sc.lambda[i]
                        } else {
                            0.0
                        };
                        2.0 * (target - second[(i, j)]) / (sc.lambda[i] + sc.lambda[j])
                    });
                    sym(&sc.g * t * sc.g.transpose())
                })
                .collect();
            let (ds, dw, dz) = direction(&rc);
            let (ap, ad) = step_lengths(&ds, &dz);
            let ap = (settings.step_fraction * ap).min(1.0);
            let ad = (settings.step_fraction * ad).min(1.0);
            if !(ap.is_finite() && ad.is_finite()) {
                status = IpmStatus::NumericalTrouble;
                break;
            }
            if ap < 1e-10 && ad < 1e-10 {
                stalls += 1;
                if stalls > 3 {
                    status = IpmStatus::NumericalTrouble;
                    break;
                }
            }

            for (s, d) in s.iter_mut().zip(&ds) {
                *s = sym(&*s + d * ap);
            }
            for (z, d) in z.iter_mut().zip(&dz) {
                *z = sym(&*z + d * ad);
            }
            w += dw * ad;
            iterations = iter + 1;
        }

        let primal_objective = inner(&self.c, &s);
        let dual_objective = self.b.dot(&w);
        if status != IpmStatus::Optimal {
            let scale = 1.0 + primal_objective.abs() + dual_objective.abs();
            let rd: BlockMat = self
                .c
                .iter()
                .zip(&z)
                .zip(&self.at_op(&w))
                .map(|((c, z), a)| c - z - a)
                .collect();
            let gap = (primal_objective - dual_objective).abs() / scale;
            let measures = [
                inner(&s, &z).abs() / scale,
                (&self.b - self.a_op(&s)).norm() / (1.0 + b_norm),
                norm(&rd) / (1.0 + c_norm),
            ];
            if gap <= settings.gap_tol && measures.iter().all(|m| *m <= settings.loose_tol) {
                status = IpmStatus::Inaccurate;
            }
        }

        IpmResult {
            primal_objective,
            dual_objective,
            s,
            w,
            iterations,
            status,
        }
    }
}

fn factor_schur(schur: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(schur.clone()) {
        return Some(c);
    }
    let scale = schur
        .diagonal()
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
        .max(1.0);
    let mut shift = 1e-14 * scale;
    for _ in 0..6 {
        let mut m = schur.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        if let Some(c) = Cholesky::new(m) {
            return Some(c);
        }
        shift *= 100.0;
    }
    None
}
