use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::site_mask;
use crate::model::Basis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl From<Basis> for Pauli {
    fn from(b: Basis) -> Self {
        match b {
            Basis::X => Pauli::X,
            Basis::Y => Pauli::Y,
        }
    }
}

/// Density matrix kept as separate real and imaginary parts so that unitary
/// conjugation runs on real matrix products.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub(crate) n_sites: usize,
    pub(crate) re: DMatrix<f64>,
    pub(crate) im: DMatrix<f64>,
}

impl DensityMatrix {
    pub fn from_pure(n_sites: usize, psi: &DVector<Complex64>) -> Self {
        let d = psi.len();
        assert_eq!(d, 1 << n_sites);
        let mut re = DMatrix::zeros(d, d);
        let mut im = DMatrix::zeros(d, d);
        for b in 0..d {
            let pb = psi[b].conj();
            for a in 0..d {
                let v = psi[a] * pb;
                re[(a, b)] = v.re;
                im[(a, b)] = v.im;
            }
        }
        Self { n_sites, re, im }
    }

    pub fn maximally_mixed(n_sites: usize) -> Self {
        let d = 1 << n_sites;
        Self {
            n_sites,
            re: DMatrix::identity(d, d) / d as f64,
            im: DMatrix::zeros(d, d),
        }
    }

    pub fn from_complex(n_sites: usize, m: &DMatrix<Complex64>) -> Self {
        Self {
            n_sites,
            re: m.map(|z| z.re),
            im: m.map(|z| z.im),
        }
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        self.re.zip_map(&self.im, Complex64::new)
    }

    /// `|s⟩⟨s| ⊗ rest` with `s` a single-spin state for site 0.
    pub fn product_spin1(spin1: [Complex64; 2], rest: &DensityMatrix) -> Self {
        let n_sites = rest.n_sites + 1;
        let dr = rest.dim();
        let d = 2 * dr;
        let mut re = DMatrix::zeros(d, d);
        let mut im = DMatrix::zeros(d, d);
        for x in 0..2 {
            for y in 0..2 {
                let c = spin1[x] * spin1[y].conj();
                for a in 0..dr {
                    for b in 0..dr {
                        let v = c * Complex64::new(rest.re[(a, b)], rest.im[(a, b)]);
                        re[(x * dr + a, y * dr + b)] = v.re;
                        im[(x * dr + a, y * dr + b)] = v.im;
                    }
                }
            }
        }
        Self { n_sites, re, im }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.re.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        Complex64::new(self.re.trace(), self.im.trace())
    }

    /// Largest deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        (&self.re - self.re.transpose())
            .amax()
            .max((&self.im + self.im.transpose()).amax())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let c = self.to_complex();
        let h = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `tr(σ_site ρ)`, real part.
    pub fn expect(&self, site: usize, pauli: Pauli) -> f64 {
        let m = site_mask(self.n_sites, site);
        let mut acc = 0.0;
        for a in 0..self.dim() {
            let bit = a & m != 0;
            acc += match pauli {
                Pauli::X => self.re[(a ^ m, a)],
                Pauli::Y => {
                    if bit {
                        -self.im[(a ^ m, a)]
                    } else {
                        self.im[(a ^ m, a)]
                    }
                }
                Pauli::Z => {
                    if bit {
                        -self.re[(a, a)]
                    } else {
                        self.re[(a, a)]
                    }
                }
            };
        }
        acc
    }

    /// Copy the upper triangle onto the lower one so the stored matrix is
    /// Hermitian bit for bit, discarding rounding asymmetry.
    pub(crate) fn mirror_lower(&mut self) {
        let d = self.dim();
        for b in 0..d {
            self.im[(b, b)] = 0.0;
            for a in 0..b {
                self.re[(b, a)] = self.re[(a, b)];
                self.im[(b, a)] = -self.im[(a, b)];
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.re *= c;
        self.im *= c;
    }

    pub fn axpy(&mut self, c: f64, other: &DensityMatrix) {
        self.re += &other.re * c;
        self.im += &other.im * c;
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (&self.re - &other.re)
            .amax()
            .max((&self.im - &other.im).amax())
    }
}

/// Eigenstate `|±⟩` of `basis` on one spin, as amplitudes on `|0⟩, |1⟩`.
pub fn spin1_state(basis: Basis, sign: i8) -> [Complex64; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let s = f64::from(sign.signum());
    match basis {
        Basis::X => [Complex64::new(h, 0.0), Complex64::new(s * h, 0.0)],
        Basis::Y => [Complex64::new(h, 0.0), Complex64::new(0.0, s * h)],
    }
}

/// Haar-random pure state on `n_sites` spins.
pub fn haar_state<R: Rng + ?Sized>(n_sites: usize, rng: &mut R) -> DVector<Complex64> {
    let d = 1 << n_sites;
    let mut v = DVector::from_fn(d, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let norm = v.norm();
    v /= Complex64::new(norm, 0.0);
    v
}

/// `spin1 ⊗ rest` as a state vector.
pub(crate) fn product_vector(
    spin1: [Complex64; 2],
    rest: &DVector<Complex64>,
) -> DVector<Complex64> {
    let dr = rest.len();
    DVector::from_fn(2 * dr, |i, _| spin1[i / dr] * rest[i % dr])
}

/// `⟨ψ|σ_site|ψ⟩`.
pub(crate) fn expect_vector(
    n_sites: usize,
    psi: &DVector<Complex64>,
    site: usize,
    pauli: Pauli,
) -> f64 {
    let m = site_mask(n_sites, site);
    let mut acc = 0.0;
    for a in 0..psi.len() {
        let bit = a & m != 0;
        let applied = match pauli {
            Pauli::X => psi[a ^ m],
            // Y|0⟩ = i|1⟩, Y|1⟩ = -i|0⟩, so (Yψ)_a = ±i ψ_{a^m}.
            Pauli::Y => {
                if bit {
                    psi[a ^ m] * Complex64::new(0.0, 1.0)
                } else {
                    psi[a ^ m] * Complex64::new(0.0, -1.0)
                }
            }
            Pauli::Z => {
                if bit {
                    -psi[a]
                } else {
                    psi[a]
                }
            }
        };
        acc += (psi[a].conj() * applied).re;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{stream, Purpose};

    #[test]
    fn spin1_eigenstates() {
        let rest = DensityMatrix::maximally_mixed(2);
        for (basis, pauli) in [(Basis::X, Pauli::X), (Basis::Y, Pauli::Y)] {
            for s in [1i8, -1] {
                let rho = DensityMatrix::product_spin1(spin1_state(basis, s), &rest);
                assert!((rho.expect(0, pauli) - f64::from(s)).abs() < 1e-15);
                assert!(rho.expect(0, Pauli::Z).abs() < 1e-15);
                assert!((rho.trace().re - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn vector_and_density_expectations_agree() {
        let mut rng = stream(1, Purpose::Hidden, 0, 0, 0);
        let psi = haar_state(3, &mut rng);
        let rho = DensityMatrix::from_pure(3, &psi);
        for site in 0..3 {
            for p in [Pauli::X, Pauli::Y, Pauli::Z] {
                assert!((rho.expect(site, p) - expect_vector(3, &psi, site, p)).abs() < 1e-14);
            }
        }
        assert!(rho.hermiticity_error() < 1e-16);
        assert!(rho.min_eigenvalue() > -1e-12);
    }
}
