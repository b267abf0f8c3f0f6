//! Single-spin Kraus channels.

use nalgebra::Matrix2;
use num_complex::Complex64;

use super::{site_mask, DensityMatrix};
use crate::model::thermal_p;

/// `{D0, D1}` with `D0 = sqrt((1+e^{-γτ})/2) I`, `D1 = sqrt((1-e^{-γτ})/2) Z`.
pub fn dephasing_kraus(gamma_tau: f64) -> [Matrix2<f64>; 2] {
    let e = (-gamma_tau).exp();
    let a = ((1.0 + e) / 2.0).sqrt();
    let b = ((1.0 - e) / 2.0).sqrt();
    [Matrix2::new(a, 0.0, 0.0, a), Matrix2::new(b, 0.0, 0.0, -b)]
}

/// Finite-temperature amplitude damping `{A0, A1, A2, A3}` with
/// `p = (n̄+1)/(2n̄+1)`.
pub fn amplitude_damping_kraus(big_gamma_tau: f64, nbar: f64) -> [Matrix2<f64>; 4] {
    let p = thermal_p(nbar);
    let e = (-big_gamma_tau).exp();
    let sqe = (-big_gamma_tau / 2.0).exp();
    let sp = p.sqrt();
    let sq = (1.0 - p).sqrt();
    let decay = (1.0 - e).sqrt();
    [
        Matrix2::new(sp, 0.0, 0.0, sp * sqe),
        Matrix2::new(0.0, sp * decay, 0.0, 0.0),
        Matrix2::new(sq * sqe, 0.0, 0.0, sq),
        Matrix2::new(0.0, 0.0, sq * decay, 0.0),
    ]
}

/// `max |Σ K†K - I|`.
pub fn kraus_completeness_error(ops: &[Matrix2<f64>]) -> f64 {
    let sum = ops
        .iter()
        .fold(Matrix2::zeros(), |acc, k| acc + k.transpose() * k);
    (sum - Matrix2::identity()).amax()
}

/// `ρ ↦ Σ_k (K_k ⊗ I) ρ (K_k ⊗ I)†` on one site, real Kraus operators.
pub fn apply_kraus(rho: &mut DensityMatrix, site: usize, ops: &[Matrix2<f64>]) {
    // Superoperator on the 2x2 site block: vec(K B K^T) = (K ⊗ K) vec(B).
    let mut sup = [[0.0f64; 4]; 4];
    for k in ops {
        for x in 0..2 {
            for y in 0..2 {
                for u in 0..2 {
                    for v in 0..2 {
                        sup[2 * x + y][2 * u + v] += k[(x, u)] * k[(y, v)];
                    }
                }
            }
        }
    }
    let m = site_mask(rho.n_sites, site);
    let d = rho.dim();
    for part in [&mut rho.re, &mut rho.im] {
        for b0 in (0..d).filter(|b| b & m == 0) {
            let cols = [b0, b0 | m];
            for a0 in (0..d).filter(|a| a & m == 0) {
                let rows = [a0, a0 | m];
                let blk = [
                    part[(rows[0], cols[0])],
                    part[(rows[0], cols[1])],
                    part[(rows[1], cols[0])],
                    part[(rows[1], cols[1])],
                ];
                for (i, row) in sup.iter().enumerate() {
                    part[(rows[i / 2], cols[i % 2])] =
                        row[0] * blk[0] + row[1] * blk[1] + row[2] * blk[2] + row[3] * blk[3];
                }
            }
        }
    }
    rho.mirror_lower();
}

/// `ρ ↦ (P ⊗ I) ρ (P ⊗ I)†` for a complex single-site operator.
pub(crate) fn sandwich(rho: &mut DensityMatrix, site: usize, p: &Matrix2<Complex64>) {
    let m = site_mask(rho.n_sites, site);
    let d = rho.dim();
    let pd = p.adjoint();
    for b0 in (0..d).filter(|b| b & m == 0) {
        let cols = [b0, b0 | m];
        for a0 in (0..d).filter(|a| a & m == 0) {
            let rows = [a0, a0 | m];
            let blk = Matrix2::from_fn(|i, j| {
                Complex64::new(rho.re[(rows[i], cols[j])], rho.im[(rows[i], cols[j])])
            });
            let out = p * blk * pd;
            for i in 0..2 {
                for j in 0..2 {
                    rho.re[(rows[i], cols[j])] = out[(i, j)].re;
                    rho.im[(rows[i], cols[j])] = out[(i, j)].im;
                }
            }
        }
    }
    rho.mirror_lower();
}

pub fn apply_dephasing(rho: &mut DensityMatrix, site: usize, gamma_tau: f64) {
    if gamma_tau > 0.0 {
        apply_kraus(rho, site, &dephasing_kraus(gamma_tau));
    }
}

pub fn apply_amplitude_damping(
    rho: &mut DensityMatrix,
    site: usize,
    big_gamma_tau: f64,
    nbar: f64,
) {
    if big_gamma_tau > 0.0 {
        apply_kraus(rho, site, &amplitude_damping_kraus(big_gamma_tau, nbar));
    }
}
