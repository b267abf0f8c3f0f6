use nalgebra::DMatrix;

use super::{site_mask, MAX_SITES};
use crate::error::{Error, Result};
use crate::model::{HamiltonianSpec, Variant};

/// Dense chain Hamiltonian. Every supported term is real in the computational
/// basis, so the Hermitian matrix is stored as a real symmetric one.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    pub n_sites: usize,
    pub matrix: DMatrix<f64>,
}

impl Hamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn build_hamiltonian(spec: &HamiltonianSpec) -> Result<Hamiltonian> {
    build_hamiltonian_capped(spec, MAX_SITES)
}

pub fn build_hamiltonian_capped(spec: &HamiltonianSpec, cap: usize) -> Result<Hamiltonian> {
    let n = spec.n_sites();
    if n > cap {
        return Err(Error::TooManySites { sites: n, cap });
    }
    let (jx, jy): (Vec<f64>, Vec<f64>) = match &spec.variant {
        Variant::Xx(c) => (c.couplings.clone(), c.couplings.clone()),
        Variant::Xy { jx, jy } => (jx.couplings.clone(), jy.couplings.clone()),
    };
    let (h, g) = match &spec.spurious {
        None => (vec![0.0; n], vec![0.0; n - 1]),
        Some(s) => (
            s.z_values(n).ok_or(Error::UnrealizedSpurious)?,
            s.zz_values(n).ok_or(Error::UnrealizedSpurious)?,
        ),
    };

    let dim = 1usize << n;
    let mut m = DMatrix::zeros(dim, dim);
    let z = |a: usize, k: usize| if a & site_mask(n, k) == 0 { 1.0 } else { -1.0 };
    for a in 0..dim {
        let mut diag = 0.0;
        for k in 0..n {
            diag += h[k] * z(a, k);
        }
        for k in 0..n - 1 {
            let (zk, zk1) = (z(a, k), z(a, k + 1));
            diag += g[k] * zk * zk1;
            // XX flips both spins with amplitude +1; YY flips them with -1
            // when they are parallel and +1 when antiparallel.
            let amp = if zk == zk1 {
                jx[k] - jy[k]
            } else {
                jx[k] + jy[k]
            };
            if amp != 0.0 {
                let b = a ^ site_mask(n, k) ^ site_mask(n, k + 1);
                m[(b, a)] += amp;
            }
        }
        m[(a, a)] = diag;
    }
    Ok(Hamiltonian {
        n_sites: n,
        matrix: m,
    })
}

/// `max |[H, Σ_i Z_i]|` entry.
pub fn total_z_commutator_norm(h: &Hamiltonian) -> f64 {
    let n = h.n_sites;
    let mag = |a: usize| {
        (0..n)
            .map(|k| if a & site_mask(n, k) == 0 { 1.0 } else { -1.0 })
            .sum::<f64>()
    };
    let mut worst: f64 = 0.0;
    for a in 0..h.dim() {
        for b in 0..h.dim() {
            worst = worst.max((h.matrix[(a, b)] * (mag(b) - mag(a))).abs());
        }
    }
    worst
}
