//! Operator-flux model of the first spin.
//!
//! In the Heisenberg picture `X_1(t)` stays inside an `N`-dimensional family
//! of Pauli strings `{X_1, Z_1 Y_2, Z_1 Z_2 X_3, ...}`. The coefficients
//! `α_j(t)` of that expansion obey `dα/dt = 2 M α` with `M` the skew-symmetric
//! tridiagonal flux matrix
//!
//! ```text
//! M[j][j+1] = (-1)^j b_j,   M[j+1][j] = -M[j][j+1]     (1-based j)
//! ```
//!
//! so `α(t) = exp(2tM) e_1` and `⟨X_1(t)⟩ = α_1(t)` once spin 1 sits in `|+x⟩`.
//!
//! A diagonal unitary similarity turns `M` into `i T`, where `T` is the real
//! symmetric tridiagonal matrix with zero diagonal and off-diagonals `|b_j|`.
//! Its spectrum is symmetric about zero, so
//!
//! ```text
//! α_1(t) = dc + Σ_k w_k cos(2 λ_k t)
//! ```
//!
//! with `λ_k > 0` the distinct eigenvalue magnitudes, `w_k` the summed squared
//! first eigenvector components of `±λ_k`, and `dc` the weight on the zero
//! eigenvalue that exists for odd `N`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Basis, HamiltonianSpec, Variant};

/// Frequencies closer than this (in units of `J`) are one mode.
pub const DEGENERACY_GAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxMatrix {
    off_diagonals: Vec<f64>,
}

impl FluxMatrix {
    pub fn from_off_diagonals(b: Vec<f64>) -> Self {
        assert!(!b.is_empty(), "flux matrix needs at least one bond");
        Self { off_diagonals: b }
    }

    pub fn dim(&self) -> usize {
        self.off_diagonals.len() + 1
    }

    pub fn off_diagonals(&self) -> &[f64] {
        &self.off_diagonals
    }

    /// Signed superdiagonal entry `M[j][j+1]`, 0-based `j`.
    fn upper(&self, j: usize) -> f64 {
        // 1-based row index j+1 carries the sign (-1)^(j+1).
        if j % 2 == 0 {
            -self.off_diagonals[j]
        } else {
            self.off_diagonals[j]
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n - 1 {
            let u = self.upper(j);
            m[(j, j + 1)] = u;
            m[(j + 1, j)] = -u;
        }
        m
    }

    /// `M v` without forming the matrix.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for j in 0..n - 1 {
            let u = self.upper(j);
            out[j] += u * v[j + 1];
            out[j + 1] -= u * v[j];
        }
        out
    }

    pub fn norm_inf(&self) -> f64 {
        self.off_diagonals.iter().fold(0.0, |m, b| m.max(b.abs()))
    }

    /// Symmetric companion `T` with zero diagonal and off-diagonals `|b_j|`.
    pub fn symmetric_companion(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut t = DMatrix::zeros(n, n);
        for (j, b) in self.off_diagonals.iter().enumerate() {
            t[(j, j + 1)] = b.abs();
            t[(j + 1, j)] = b.abs();
        }
        t
    }

    /// Diagonal phases `d` with `M = D (iT) D^{-1}`.
    fn phases(&self) -> Vec<Complex64> {
        let mut d = vec![Complex64::new(1.0, 0.0)];
        for j in 0..self.dim() - 1 {
            let s = self.upper(j);
            let ratio = if s == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, s.abs() / s)
            };
            d.push(d[j] * ratio);
        }
        d
    }

    /// All coefficients `α_j(t) = [exp(2tM)]_{j,1}`.
    pub fn coefficients(&self, t: f64) -> Result<DVector<f64>> {
        let t_mat = self.symmetric_companion();
        let eig = t_mat
            .try_symmetric_eigen(f64::EPSILON, 10_000)
            .ok_or_else(|| {
                Error::Eigen("symmetric tridiagonal eigensolver did not converge".into())
            })?;
        let d = self.phases();
        let n = self.dim();
        let v = &eig.eigenvectors;
        let mut out = DVector::zeros(n);
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                let phase = Complex64::from_polar(1.0, 2.0 * eig.eigenvalues[k] * t);
                acc += phase * (v[(j, k)] * v[(0, k)]);
            }
            out[j] = (d[j] * acc / d[0]).re;
        }
        Ok(out)
    }
}

/// Flux matrix seen by a measurement of spin 1 in `basis`.
pub fn build_flux_matrix(spec: &HamiltonianSpec, basis: Basis) -> Result<FluxMatrix> {
    let seq = effective_sequences(spec)?;
    Ok(FluxMatrix::from_off_diagonals(match basis {
        Basis::X => seq.b_x,
        Basis::Y => seq.b_y,
    }))
}

/// Couplings driving the X- and Y-measurement channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSequences {
    pub b_x: Vec<f64>,
    pub b_y: Vec<f64>,
}

/// For the `XY` chain the X channel sees `J_Y` on odd bonds and `J_X` on even
/// bonds (1-based); the Y channel sees the complement.
pub fn effective_sequences(spec: &HamiltonianSpec) -> Result<EffectiveSequences> {
    if !spec.is_spurious_free() {
        return Err(Error::SpuriousPresent(
            "the flux model is exact only without spurious terms",
        ));
    }
    Ok(match &spec.variant {
        Variant::Xx(c) => EffectiveSequences {
            b_x: c.couplings.clone(),
            b_y: c.couplings.clone(),
        },
        Variant::Xy { jx, jy } => {
            let (mut b_x, mut b_y) = (Vec::new(), Vec::new());
            for (i, (x, y)) in jx.couplings.iter().zip(&jy.couplings).enumerate() {
                // i is 0-based: even i is odd bond k = i + 1.
                if i % 2 == 0 {
                    b_x.push(*y);
                    b_y.push(*x);
                } else {
                    b_x.push(*x);
                    b_y.push(*y);
                }
            }
            EffectiveSequences { b_x, b_y }
        }
    })
}

/// Cosine-sum form of `α_1(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxSpectrum {
    /// Distinct positive `λ_k`, increasing. Angular frequencies are `2 λ_k`.
    pub frequencies: Vec<f64>,
    pub weights: Vec<f64>,
    pub dc_weight: f64,
    /// Set when eigenvalues closer than [`DEGENERACY_GAP`] were merged.
    #[serde(default)]
    pub merged: bool,
}

impl FluxSpectrum {
    pub fn total_weight(&self) -> f64 {
        self.dc_weight + self.weights.iter().sum::<f64>()
    }

    /// Signed eigenvalues `±λ_k` (and `0` when `dc_weight > 0` or the
    /// dimension is odd) with their first-component weights, ascending.
    pub fn signed_eigen_data(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for (l, w) in self.frequencies.iter().zip(&self.weights) {
            pairs.push((-l, w / 2.0));
            pairs.push((*l, w / 2.0));
        }
        if n % 2 == 1 {
            pairs.push((0.0, self.dc_weight));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    }
}

/// Eigen-decomposition of the flux matrix into cosine modes.
pub fn spectral_decompose(m: &FluxMatrix) -> Result<FluxSpectrum> {
    let t = m.symmetric_companion();
    let eig = t
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric tridiagonal eigensolver did not converge".into()))?;

    let scale = m.norm_inf().max(1.0);
    let residual = (&t * &eig.eigenvectors
        - &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues))
    .amax();
    if !(residual <= 1e-10 * scale) {
        return Err(Error::Eigen(format!(
            "eigen-residual {residual:e} exceeds 1e-10 * |M|"
        )));
    }

    let n = m.dim();
    let mut modes: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k].abs(), eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));

    let zero_tol = DEGENERACY_GAP * scale;
    let mut dc_weight = 0.0;
    let mut dc_count = 0;
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for (lam, w) in modes {
        if lam < zero_tol {
            dc_weight += w;
            dc_count += 1;
            continue;
        }
        match groups.last_mut() {
            Some(g) if lam - g.0 < zero_tol => {
                g.1 += w;
                g.2 += 1;
            }
            _ => groups.push((lam, w, 1)),
        }
    }
    let merged = dc_count > 1 || groups.iter().any(|g| g.2 > 2);
    Ok(FluxSpectrum {
        frequencies: groups.iter().map(|g| g.0).collect(),
        weights: groups.iter().map(|g| g.1).collect(),
        dc_weight,
        merged,
    })
}

/// `α_1(t)` from the cosine-sum form.
pub fn alpha1(t: f64, s: &FluxSpectrum) -> f64 {
    s.dc_weight
        + s.frequencies
            .iter()
            .zip(&s.weights)
            .map(|(l, w)| w * (2.0 * l * t).cos())
            .sum::<f64>()
}

/// Partial sum `Σ_{l ≤ order} (2t)^l / l! δ_1^(l)` of the moment series, with
/// `δ^(0) = e_1` and `δ^(l) = M δ^(l-1)`.
pub fn alpha1_series(t: f64, m: &FluxMatrix, order: usize) -> f64 {
    let mut delta = vec![0.0; m.dim()];
    delta[0] = 1.0;
    let mut coeff = 1.0;
    let mut sum = 1.0;
    for l in 1..=order {
        delta = m.apply(&delta);
        coeff *= 2.0 * t / l as f64;
        sum += coeff * delta[0];
    }
    sum
}
