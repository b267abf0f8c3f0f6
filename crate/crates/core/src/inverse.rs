//! From fitted cosines back to couplings.
//!
//! The fit gives the eigenvalues `±λ_k` of the symmetric companion `T` of the
//! flux matrix and the squared first components of its eigenvectors. That is
//! exactly the data of a Jacobi inverse eigenvalue problem: a Lanczos run on
//! `diag(±λ_k)` started from the square-rooted weights rebuilds `T`.
//!
//! Only `|b_j|` is identifiable from `α_1(t)`; the positive branch is returned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{minimize, sqrt_weights, HarmonicFit, LsqOptions, Problem};
use crate::flux::{alpha1, spectral_decompose, FluxMatrix, FluxSpectrum};
use crate::hilbert::SampleSeries;

/// Spectral data implied by a fit of an `n_sites` chain.
pub fn spectral_data_from_fit(fit: &HarmonicFit, n_sites: usize) -> Result<FluxSpectrum> {
    let k = n_sites / 2;
    let odd = n_sites % 2 == 1;
    if fit.modes.len() != k || fit.has_dc != odd {
        return Err(Error::IllPosed(format!(
            "a {n_sites}-site chain needs {k} modes{}, fit has {}{}",
            if odd { " and a constant" } else { "" },
            fit.modes.len(),
            if fit.has_dc { " and a constant" } else { "" }
        )));
    }
    let total = fit.amplitudes().iter().sum::<f64>() + fit.dc;
    if !(total > 0.0) {
        return Err(Error::IllPosed(format!(
            "total amplitude {total} is not positive"
        )));
    }
    let weights: Vec<f64> = fit.modes.iter().map(|m| m.amplitude / total).collect();
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::IllPosed(format!(
            "nonpositive weight {w} for mode {}",
            i + 1
        )));
    }
    let dc_weight = fit.dc / total;
    if odd && !(dc_weight > 0.0) {
        return Err(Error::IllPosed(format!(
            "nonpositive constant weight {dc_weight}"
        )));
    }
    let frequencies: Vec<f64> = fit.modes.iter().map(|m| m.omega / 2.0).collect();
    if frequencies.windows(2).any(|w| !(w[1] > w[0]))
        || frequencies.first().is_some_and(|l| !(*l > 0.0))
    {
        return Err(Error::IllPosed(
            "frequencies must be positive and distinct".into(),
        ));
    }
    Ok(FluxSpectrum {
        frequencies,
        weights,
        dc_weight,
        merged: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    /// `b_1..b_{N-1}`, positive.
    pub couplings: Vec<f64>,
    /// Largest diagonal entry of the rebuilt matrix; zero for consistent data.
    pub diagonal_residual: f64,
}

/// Jacobi matrix with the given spectral data, by Lanczos with full
/// reorthogonalization.
pub fn lanczos_reconstruct(spectrum: &FluxSpectrum, n_sites: usize) -> Result<Reconstruction> {
    let (eigs, weights) = spectrum.signed_eigen_data(n_sites);
    if eigs.len() != n_sites {
        return Err(Error::IllPosed(format!(
            "{} eigenvalues for a {n_sites}-site chain",
            eigs.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::IllPosed(format!("nonpositive weight {w}")));
    }
    let n = n_sites;
    let scale = eigs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);

    let mut q = DMatrix::<f64>::zeros(n, n);
    let start = DVector::from_iterator(n, weights.iter().map(|w| w.sqrt()));
    q.set_column(0, &(&start / start.norm()));
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n.saturating_sub(1)];
    for j in 0..n {
        let qj = q.column(j).into_owned();
        let mut r = DVector::from_iterator(n, qj.iter().zip(&eigs).map(|(x, l)| x * l));
        alpha[j] = qj.dot(&r);
        if j + 1 == n {
            break;
        }
        r -= &qj * alpha[j];
        if j > 0 {
            r -= q.column(j - 1) * beta[j - 1];
        }
        for _ in 0..2 {
            let basis = q.columns(0, j + 1);
            let proj = basis.transpose() * &r;
            r -= basis * proj;
        }
        let norm = r.norm();
        if !(norm > 1e-12 * scale) {
            return Err(Error::LanczosBreakdown {
                step: j + 1,
                detail: format!(
                    "residual norm {norm:e} (coinciding eigenvalues or vanishing weight)"
                ),
            });
        }
        beta[j] = norm;
        q.set_column(j + 1, &(r / norm));
    }
    Ok(Reconstruction {
        couplings: beta,
        diagonal_residual: alpha.iter().fold(0.0, |m, a| m.max(a.abs())),
    })
}

/// `J_X` and `J_Y` from the two effective sequences of an anisotropic chain.
pub fn deinterleave_h2(b_x: &[f64], b_y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    // Bond k (1-based) odd: b_x carries J_Y, b_y carries J_X; even: the reverse.
    b_x.iter()
        .zip(b_y)
        .enumerate()
        .map(|(i, (&x, &y))| if i % 2 == 0 { (y, x) } else { (x, y) })
        .unzip()
}

/// How decay enters the direct model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingModel {
    None,
    /// One envelope `e^{-γ̃t}` on the whole trace.
    Uniform,
    /// `dα/dt = (2M - D) α` with `D_j = d0 + (j-1) d1`. Local dephasing damps
    /// every `α_j` alike, while local amplitude damping also erodes the
    /// `Z` string in front of site `j`, so decay grows along the chain.
    Profile,
}

impl DampingModel {
    fn n_params(self) -> usize {
        match self {
            DampingModel::None => 0,
            DampingModel::Uniform => 1,
            DampingModel::Profile => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub couplings: Vec<f64>,
    pub model: DampingModel,
    /// `γ̃`, or `d0` for the profile model.
    pub damping: f64,
    /// `d1` for the profile model, zero otherwise.
    pub damping_slope: f64,
    /// Unweighted RMS residual at the starting point and at the result.
    pub initial_rms: f64,
    pub final_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// False when the start was kept because no step improved on it.
    pub improved: bool,
}

/// Finite-difference step for the coupling Jacobian.
const FD_STEP: f64 = 1e-6;

/// `α_1` on increasing `times` under the profile model.
pub fn alpha1_profile(times: &[f64], b: &[f64], d0: f64, d1: f64) -> Vec<f64> {
    let n = b.len() + 1;
    let m = FluxMatrix::from_off_diagonals(b.to_vec()).to_dense();
    let mut g = m * 2.0;
    for j in 0..n {
        g[(j, j)] -= d0 + j as f64 * d1;
    }
    let mut v = DVector::zeros(n);
    v[0] = 1.0;
    let mut prev = 0.0;
    let mut cached: Option<(f64, DMatrix<f64>)> = None;
    times
        .iter()
        .map(|&t| {
            let dt = t - prev;
            prev = t;
            let step = match &cached {
                Some((d, e)) if (d - dt).abs() <= 1e-12 * dt.abs().max(1.0) => e.clone(),
                _ => {
                    let e = (&g * dt).exp();
                    cached = Some((dt, e.clone()));
                    e
                }
            };
            v = &step * &v;
            v[0]
        })
        .collect()
}

struct DirectModel<'a> {
    times: &'a [f64],
    /// Largest admissible eigenvalue of the companion matrix. Modes with
    /// fewer than four samples per period are barely identifiable and let
    /// the fit trade couplings for aliases.
    lambda_max: f64,
    values: &'a [f64],
    sqrt_w: Vec<f64>,
    n_b: usize,
    damping: DampingModel,
}

impl DirectModel<'_> {
    fn curve(&self, p: &DVector<f64>) -> Option<Vec<f64>> {
        let b: Vec<f64> = p.rows(0, self.n_b).iter().copied().collect();
        let top = FluxMatrix::from_off_diagonals(b.clone())
            .symmetric_companion()
            .symmetric_eigenvalues()
            .amax();
        if !(top < self.lambda_max) {
            return None;
        }
        match self.damping {
            DampingModel::Profile => {
                let c = alpha1_profile(self.times, &b, p[self.n_b], p[self.n_b + 1]);
                c.iter().all(|x| x.is_finite()).then_some(c)
            }
            _ => {
                let s = spectral_decompose(&FluxMatrix::from_off_diagonals(b)).ok()?;
                let g = if self.damping == DampingModel::Uniform {
                    p[self.n_b]
                } else {
                    0.0
                };
                Some(
                    self.times
                        .iter()
                        .map(|t| (-g * t).exp() * alpha1(*t, &s))
                        .collect(),
                )
            }
        }
    }

    fn rms(&self, p: &DVector<f64>) -> f64 {
        match self.curve(p) {
            Some(c) => (c
                .iter()
                .zip(self.values)
                .map(|(m, y)| (m - y).powi(2))
                .sum::<f64>()
                / self.times.len() as f64)
                .sqrt(),
            None => f64::INFINITY,
        }
    }
}

impl Problem for DirectModel<'_> {
    fn n_params(&self) -> usize {
        self.n_b + self.damping.n_params()
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        match self.curve(p) {
            Some(c) => DVector::from_fn(self.times.len(), |i, _| {
                self.sqrt_w[i] * (c[i] - self.values[i])
            }),
            None => DVector::from_element(self.times.len(), f64::INFINITY),
        }
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let m = self.times.len();
        let mut jac = DMatrix::zeros(m, self.n_params());
        let analytic_rate = self.damping == DampingModel::Uniform;
        let numeric = if analytic_rate {
            self.n_b
        } else {
            self.n_params()
        };
        for j in 0..numeric {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[j] += FD_STEP;
            lo[j] -= FD_STEP;
            let (Some(a), Some(b)) = (self.curve(&hi), self.curve(&lo)) else {
                continue;
            };
            for i in 0..m {
                jac[(i, j)] = self.sqrt_w[i] * (a[i] - b[i]) / (2.0 * FD_STEP);
            }
        }
        if analytic_rate {
            if let Some(c) = self.curve(p) {
                for i in 0..m {
                    jac[(i, self.n_b)] = -self.times[i] * self.sqrt_w[i] * c[i];
                }
            }
        }
        jac
    }
}

fn direct_fit(
    series: &SampleSeries,
    b0: &[f64],
    damping: DampingModel,
    rates: &[f64],
) -> Result<Refinement> {
    let n_extra = damping.n_params();
    if series.len() < b0.len() + n_extra + 1 {
        return Err(Error::FitInput(format!(
            "{} samples cannot determine {} couplings",
            series.len(),
            b0.len()
        )));
    }
    if series.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::FitInput("times must be strictly increasing".into()));
    }
    let (sqrt_w, _) = sqrt_weights(&series.std_errors);
    let t_max = series.times[series.len() - 1];
    let model = DirectModel {
        times: &series.times,
        lambda_max: std::f64::consts::PI * series.len() as f64 / (4.0 * t_max),
        values: &series.values,
        sqrt_w,
        n_b: b0.len(),
        damping,
    };
    // Pull an inadmissible start back inside the frequency bound.
    let top = FluxMatrix::from_off_diagonals(b0.to_vec())
        .symmetric_companion()
        .symmetric_eigenvalues()
        .amax();
    let shrink = if top >= model.lambda_max {
        0.9 * model.lambda_max / top
    } else {
        1.0
    };
    let mut p0: Vec<f64> = b0.iter().map(|b| b * shrink).collect();
    p0.extend(rates.iter().take(n_extra));
    p0.resize(b0.len() + n_extra, 0.0);
    let p0 = DVector::from_vec(p0);
    let start_cost = 0.5 * model.residuals(&p0).norm_squared();
    let initial_rms = model.rms(&p0);
    let out = minimize(&model, p0.clone(), &LsqOptions::default());
    let improved = out.cost.is_finite() && out.cost < start_cost;
    let mut p = if improved { out.params } else { p0 };
    if damping == DampingModel::Uniform {
        p[model.n_b] = p[model.n_b].max(0.0);
    }
    let extra = |i: usize| if n_extra > i { p[model.n_b + i] } else { 0.0 };
    Ok(Refinement {
        couplings: p.rows(0, model.n_b).iter().map(|b| b.abs()).collect(),
        model: damping,
        damping: extra(0),
        damping_slope: extra(1),
        initial_rms,
        final_rms: model.rms(&p),
        iterations: out.iterations,
        converged: out.converged,
        improved,
    })
}

/// Direct weighted least squares of the series against `e^{-γ̃t} α_1(t; b)`,
/// started at `b0` (and `damping`, when the model is damped).
pub fn refine_couplings(
    series: &SampleSeries,
    b0: &[f64],
    damping: Option<f64>,
) -> Result<Refinement> {
    match damping {
        Some(g) => direct_fit(series, b0, DampingModel::Uniform, &[g]),
        None => direct_fit(series, b0, DampingModel::None, &[]),
    }
}

/// Direct fit under any decay model; `rates` seeds its parameters.
pub fn refine_model(
    series: &SampleSeries,
    b0: &[f64],
    model: DampingModel,
    rates: &[f64],
) -> Result<Refinement> {
    direct_fit(series, b0, model, rates)
}

/// Direct fit under the [`DampingModel::Profile`] decay, started at `b0`
/// with `d0`, `d1`.
pub fn refine_profile(series: &SampleSeries, b0: &[f64], d0: f64, d1: f64) -> Result<Refinement> {
    direct_fit(series, b0, DampingModel::Profile, &[d0, d1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::Mode;
    use std::f64::consts::SQRT_2;

    const CASE1: [f64; 5] = [1.02, 1.26, 0.94, 1.36, 0.72];

    fn fit_of(modes: Vec<(f64, f64)>, dc: Option<f64>) -> HarmonicFit {
        HarmonicFit {
            modes: modes
                .into_iter()
                .map(|(amplitude, omega)| Mode { amplitude, omega })
                .collect(),
            has_dc: dc.is_some(),
            dc: dc.unwrap_or(0.0),
            damped: false,
            damping: 0.0,
            residual_rms: 0.0,
            parameters: Vec::new(),
            covariance: Vec::new(),
            iterations: 0,
            converged: true,
            starts: 1,
            flags: Vec::new(),
            n_points: 25,
            t_max: std::f64::consts::PI,
        }
    }

    #[test]
    fn two_site_spectrum_and_inversion() {
        let s = spectral_data_from_fit(&fit_of(vec![(1.0, 2.0)], None), 2).unwrap();
        assert_eq!(s.frequencies, vec![1.0]);
        assert_eq!(s.weights, vec![1.0]);
        let r = lanczos_reconstruct(&s, 2).unwrap();
        assert!((r.couplings[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn three_site_closed_form() {
        let s = FluxSpectrum {
            frequencies: vec![SQRT_2],
            weights: vec![0.5],
            dc_weight: 0.5,
            merged: false,
        };
        let r = lanczos_reconstruct(&s, 3).unwrap();
        for b in r.couplings {
            assert!((b - 1.0).abs() < 1e-14);
        }
        assert!(r.diagonal_residual < 1e-14);
    }

    #[test]
    fn case_one_round_trip() {
        let s = spectral_decompose(&FluxMatrix::from_off_diagonals(CASE1.to_vec())).unwrap();
        let r = lanczos_reconstruct(&s, 6).unwrap();
        for (b, want) in r.couplings.iter().zip(CASE1) {
            assert!((b - want).abs() < 1e-10);
        }
        assert!(r.diagonal_residual < 1e-8);
    }

    #[test]
    fn negative_amplitude_rejected() {
        let f = fit_of(vec![(1.05, 1.0), (-0.05, 3.0)], None);
        assert!(matches!(
            spectral_data_from_fit(&f, 4),
            Err(Error::IllPosed(_))
        ));
    }

    #[test]
    fn wrong_mode_count_rejected() {
        let f = fit_of(vec![(1.0, 2.0)], None);
        assert!(spectral_data_from_fit(&f, 3).is_err());
        assert!(spectral_data_from_fit(&f, 4).is_err());
    }

    #[test]
    fn coinciding_eigenvalues_break_down() {
        let s = FluxSpectrum {
            frequencies: vec![1.0, 1.0],
            weights: vec![0.5, 0.5],
            dc_weight: 0.0,
            merged: false,
        };
        assert!(matches!(
            lanczos_reconstruct(&s, 4),
            Err(Error::LanczosBreakdown { .. })
        ));
    }

    #[test]
    fn deinterleave_examples() {
        let b = vec![0.9, 1.1, 1.3];
        assert_eq!(deinterleave_h2(&b, &b), (b.clone(), b.clone()));
        let (jx, jy) = deinterleave_h2(&[11.0, 2.0, 13.0], &[1.0, 12.0, 3.0]);
        assert_eq!(jx, vec![1.0, 2.0, 3.0]);
        assert_eq!(jy, vec![11.0, 12.0, 13.0]);
    }

    fn exact_series(b: &[f64], gamma: f64) -> SampleSeries {
        use crate::hilbert::SeriesMeta;
        use crate::model::{Basis, Shots};
        let s = spectral_decompose(&FluxMatrix::from_off_diagonals(b.to_vec())).unwrap();
        let times: Vec<f64> = (1..=25)
            .map(|j| j as f64 * std::f64::consts::PI / 25.0)
            .collect();
        SampleSeries {
            values: times
                .iter()
                .map(|t| (-gamma * t).exp() * alpha1(*t, &s))
                .collect(),
            std_errors: vec![0.0; 25],
            times,
            meta: SeriesMeta {
                n_sites: b.len() + 1,
                basis: Basis::X,
                n_meas: Shots::Exact,
                runs: 1,
                seed: 0,
                noise_active: false,
                config_hash: None,
            },
        }
    }

    #[test]
    fn refinement_fixed_point() {
        let series = exact_series(&CASE1, 0.0);
        let r = refine_couplings(&series, &CASE1, None).unwrap();
        for (b, want) in r.couplings.iter().zip(CASE1) {
            assert!((b - want).abs() < 1e-9);
        }
    }

    #[test]
    fn refinement_recovers_perturbed_start() {
        let series = exact_series(&CASE1, 0.0);
        let mut b0 = CASE1.to_vec();
        b0[2] *= 1.05;
        let r = refine_couplings(&series, &b0, None).unwrap();
        assert!(r.improved && r.final_rms <= r.initial_rms);
        for (b, want) in r.couplings.iter().zip(CASE1) {
            assert!((b - want).abs() < 1e-7, "{:?}", r.couplings);
        }
    }

    #[test]
    fn profile_model_reduces_to_envelope() {
        let spec = spectral_decompose(&FluxMatrix::from_off_diagonals(CASE1.to_vec())).unwrap();
        let times: Vec<f64> = (1..=25).map(|j| j as f64 * 0.13).collect();
        let a = alpha1_profile(&times, &CASE1, 0.3, 0.0);
        for (t, v) in times.iter().zip(a) {
            assert!((v - (-0.3 * t).exp() * alpha1(*t, &spec)).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_refinement_recovers_slope() {
        let mut series = exact_series(&CASE1, 0.0);
        series.values = alpha1_profile(&series.times, &CASE1, 0.1, 0.03);
        let mut b0 = CASE1.to_vec();
        b0[1] *= 1.03;
        let r = refine_profile(&series, &b0, 0.12, 0.0).unwrap();
        assert!((r.damping - 0.1).abs() < 1e-6 && (r.damping_slope - 0.03).abs() < 1e-6);
        for (b, want) in r.couplings.iter().zip(CASE1) {
            assert!((b - want).abs() < 1e-6);
        }
    }

    #[test]
    fn damped_refinement_recovers_rate() {
        let series = exact_series(&CASE1, 0.3);
        let mut b0 = CASE1.to_vec();
        b0[0] *= 0.97;
        let r = refine_couplings(&series, &b0, Some(0.2)).unwrap();
        assert!((r.damping - 0.3).abs() < 1e-7);
        for (b, want) in r.couplings.iter().zip(CASE1) {
            assert!((b - want).abs() < 1e-7);
        }
    }
}
