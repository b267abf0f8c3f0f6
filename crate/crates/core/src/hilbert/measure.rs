use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::Rng;

use super::channels::sandwich;
use super::{DensityMatrix, Pauli};
use crate::model::Basis;

pub(crate) fn projector(basis: Basis, sign: i8) -> Matrix2<Complex64> {
    let half = Complex64::new(0.5, 0.0);
    let s = Complex64::new(f64::from(sign.signum()) * 0.5, 0.0);
    let sigma = match basis {
        Basis::X => Matrix2::new(
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ),
        Basis::Y => Matrix2::new(
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, 0.0),
        ),
    };
    Matrix2::identity() * half + sigma * s
}

/// Projective measurement of spin 1 in `basis`. Returns the `±1` outcome and
/// the normalized post-measurement state `P ρ P / tr(P ρ)`.
pub fn measure_spin1<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    basis: Basis,
    rng: &mut R,
) -> (i8, DensityMatrix) {
    let p_plus = ((1.0 + rho.expect(0, Pauli::from(basis))) / 2.0).clamp(0.0, 1.0);
    let outcome: i8 = if rng.random::<f64>() < p_plus { 1 } else { -1 };
    let prob = if outcome == 1 { p_plus } else { 1.0 - p_plus };
    let mut out = rho.clone();
    sandwich(&mut out, 0, &projector(basis, outcome));
    out.scale(1.0 / prob);
    (outcome, out)
}
