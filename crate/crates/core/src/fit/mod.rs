//! Cosine-sum fits of a measured `⟨σ_1(t)⟩` trace.
//!
//! The trial function is `e^{-γ̃ t} (c + Σ_k A_k cos(ω_k t))` with `⌊N/2⌋`
//! modes, a constant `c` only for odd `N`, and `γ̃ = 0` in undamped fits.

mod lsq;
mod seeds;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::SampleSeries;
use crate::stream::{stream, Purpose};

pub use lsq::{minimize, LsqOptions, LsqOutcome, Problem};

/// Number of cosine modes and presence of a constant term for an `N`-site chain.
pub fn select_mode_count(n_sites: usize) -> (usize, bool) {
    (n_sites / 2, n_sites % 2 == 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub amplitude: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    /// Coinciding frequencies, or nothing to fit.
    Degenerate,
    NegativeAmplitude,
    NotConverged,
    AboveNyquist,
    /// The periodogram had fewer peaks than requested modes.
    SeedMultiplicity,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonicFit {
    /// Sorted by increasing `ω`.
    pub modes: Vec<Mode>,
    pub has_dc: bool,
    pub dc: f64,
    pub damped: bool,
    pub damping: f64,
    pub residual_rms: f64,
    /// Parameter order of `covariance`.
    pub parameters: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub starts: usize,
    pub flags: Vec<FitFlag>,
    pub n_points: usize,
    pub t_max: f64,
}

impl HarmonicFit {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.omega).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.amplitude).collect()
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let s: f64 = self
            .modes
            .iter()
            .map(|m| m.amplitude * (m.omega * t).cos())
            .sum();
        (-self.damping * t).exp() * (self.dc + s)
    }

    /// `1σ` uncertainty of each parameter, in [`Self::parameters`] order.
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.covariance.len())
            .map(|i| self.covariance[i][i].max(0.0).sqrt())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMethod {
    CosineProny,
    MatrixPencil,
    Periodogram,
    DcOnly,
}

/// Starting values for one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSeeds {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub dc: f64,
    pub damping: f64,
    pub method: SeedMethod,
    pub multiplicity_flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub n_modes: usize,
    pub dc: bool,
    pub damped: bool,
    /// Total starts, including the unperturbed seeds.
    pub starts: usize,
    /// Relative half-width of the frequency perturbations.
    pub spread: f64,
    pub lsq: LsqOptions,
    pub seed: u64,
}

impl FitOptions {
    pub fn new(n_modes: usize, dc: bool, damped: bool) -> Self {
        Self {
            n_modes,
            dc,
            damped,
            starts: 6,
            spread: 0.1,
            lsq: LsqOptions::default(),
            seed: 0,
        }
    }

    /// Trial function fixed by the chain length.
    pub fn for_chain(n_sites: usize, damped: bool) -> Self {
        let (k, dc) = select_mode_count(n_sites);
        Self::new(k, dc, damped)
    }

    fn n_params(&self) -> usize {
        2 * self.n_modes + usize::from(self.dc) + usize::from(self.damped)
    }
}

struct Data<'a> {
    times: &'a [f64],
    values: &'a [f64],
    sqrt_w: Vec<f64>,
    weighted: bool,
}

impl<'a> Data<'a> {
    fn new(series: &'a SampleSeries) -> Result<Self> {
        if series.times.len() != series.values.len()
            || series.std_errors.len() != series.values.len()
        {
            return Err(Error::FitInput("series columns differ in length".into()));
        }
        if series
            .times
            .iter()
            .chain(&series.values)
            .chain(&series.std_errors)
            .any(|v| !v.is_finite())
        {
            return Err(Error::FitInput("series contains non-finite entries".into()));
        }
        if series.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::FitInput("times must be strictly increasing".into()));
        }
        let (sqrt_w, weighted) = sqrt_weights(&series.std_errors);
        Ok(Self {
            times: &series.times,
            values: &series.values,
            sqrt_w,
            weighted,
        })
    }
}

/// `1/σ` per sample, or all ones when the series carries no uncertainties.
pub(crate) fn sqrt_weights(std_errors: &[f64]) -> (Vec<f64>, bool) {
    let mut positive: Vec<f64> = std_errors.iter().copied().filter(|s| *s > 0.0).collect();
    if positive.is_empty() {
        return (vec![1.0; std_errors.len()], false);
    }
    positive.sort_by(f64::total_cmp);
    // Outcomes near ±1 give tiny binomial errors; keep them from dominating.
    let floor = 0.5 * positive[positive.len() / 2];
    (
        std_errors.iter().map(|s| 1.0 / s.max(floor)).collect(),
        true,
    )
}

/// `p = [A_1..A_K, ω_1..ω_K, c?, γ̃?]`.
struct CosineModel<'a> {
    data: &'a Data<'a>,
    k: usize,
    dc: bool,
    damped: bool,
}

impl CosineModel<'_> {
    fn value(&self, p: &DVector<f64>, t: f64) -> f64 {
        let mut s = if self.dc { p[2 * self.k] } else { 0.0 };
        for j in 0..self.k {
            s += p[j] * (p[self.k + j] * t).cos();
        }
        if self.damped {
            s *= (-p[p.len() - 1] * t).exp();
        }
        s
    }
}

impl Problem for CosineModel<'_> {
    fn n_params(&self) -> usize {
        2 * self.k + usize::from(self.dc) + usize::from(self.damped)
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let d = self.data;
        DVector::from_fn(d.times.len(), |i, _| {
            d.sqrt_w[i] * (self.value(p, d.times[i]) - d.values[i])
        })
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let d = self.data;
        let k = self.k;
        let mut jac = DMatrix::zeros(d.times.len(), self.n_params());
        for (i, &t) in d.times.iter().enumerate() {
            let e = if self.damped {
                (-p[p.len() - 1] * t).exp()
            } else {
                1.0
            };
            let w = d.sqrt_w[i] * e;
            for j in 0..k {
                let (s, c) = (p[k + j] * t).sin_cos();
                jac[(i, j)] = w * c;
                jac[(i, k + j)] = -w * p[j] * t * s;
            }
            if self.dc {
                jac[(i, 2 * k)] = w;
            }
            if self.damped {
                jac[(i, self.n_params() - 1)] = -t * d.sqrt_w[i] * self.value(p, t);
            }
        }
        jac
    }
}

/// Frequency seeds and least-squares amplitudes for `n_modes` cosines.
pub fn initial_guess(
    series: &SampleSeries,
    n_modes: usize,
    dc: bool,
    damped: bool,
) -> Result<ModeSeeds> {
    let data = Data::new(series)?;
    let opts = FitOptions::new(n_modes, dc, damped);
    check_length(&data, &opts)?;
    Ok(candidate_seeds(&data, &opts).remove(0))
}

fn check_length(data: &Data, opts: &FitOptions) -> Result<()> {
    let need = opts.n_params() + 1;
    if data.times.len() < need {
        return Err(Error::FitInput(format!(
            "{} samples cannot determine {} parameters",
            data.times.len(),
            opts.n_params()
        )));
    }
    Ok(())
}

fn seeded(
    data: &Data,
    omegas: Vec<f64>,
    gamma: f64,
    opts: &FitOptions,
    method: SeedMethod,
    flagged: bool,
) -> ModeSeeds {
    let (amplitudes, dc) = seeds::linear_amplitudes(
        data.times,
        data.values,
        &data.sqrt_w,
        &omegas,
        gamma,
        opts.dc,
    );
    ModeSeeds {
        frequencies: omegas,
        amplitudes,
        dc,
        damping: gamma,
        method,
        multiplicity_flagged: flagged,
    }
}

/// Unperturbed seeds, best-founded first.
fn candidate_seeds(data: &Data, opts: &FitOptions) -> Vec<ModeSeeds> {
    let k = opts.n_modes;
    if k == 0 {
        return vec![seeded(
            data,
            Vec::new(),
            0.0,
            opts,
            SeedMethod::DcOnly,
            false,
        )];
    }
    let mut out = Vec::new();
    let step = seeds::uniform_step(data.times);
    if let Some(h) = step {
        let m = 2 * k + usize::from(opts.dc);
        let pencil =
            seeds::matrix_pencil(data.values, m).and_then(|p| seeds::damped_from_poles(&p, h, k));
        let prony = seeds::cosine_prony(data.values, h, k, opts.dc);
        let mut push = |w: Vec<f64>, g: f64, method| {
            if w.iter().all(|x| x.is_finite() && *x > 0.0) {
                out.push(seeded(data, w, g, opts, method, false));
            }
        };
        if opts.damped {
            if let Some((w, g)) = pencil {
                push(w, g, SeedMethod::MatrixPencil);
            }
            if let Some(w) = prony {
                push(w, 0.0, SeedMethod::CosineProny);
            }
        } else {
            if let Some(w) = prony {
                push(w, 0.0, SeedMethod::CosineProny);
            }
            if let Some((w, _)) = pencil {
                push(w, 0.0, SeedMethod::MatrixPencil);
            }
        }
    }
    let (w, flagged) = seeds::periodogram_peaks(data.times, data.values, k);
    out.push(seeded(data, w, 0.0, opts, SeedMethod::Periodogram, flagged));
    out
}

fn pack(s: &ModeSeeds, opts: &FitOptions) -> DVector<f64> {
    let mut p: Vec<f64> = s.amplitudes.iter().chain(&s.frequencies).copied().collect();
    if opts.dc {
        p.push(s.dc);
    }
    if opts.damped {
        p.push(s.damping);
    }
    DVector::from_vec(p)
}

struct Attempt {
    outcome: LsqOutcome,
    damped: bool,
    seed_flagged: bool,
}

fn omega_norm(p: &DVector<f64>, k: usize) -> f64 {
    p.rows(k, k).norm()
}

/// Nonlinear least-squares fit of the trial function, best of several starts.
pub fn fit_cosines(series: &SampleSeries, opts: &FitOptions) -> Result<HarmonicFit> {
    let data = Data::new(series)?;
    check_length(&data, opts)?;
    let n_points = data.times.len();
    let t_max = *data.times.last().unwrap();

    if data.values.iter().all(|v| v.abs() < 1e-14) {
        return Ok(zero_fit(opts, n_points, t_max));
    }

    let base = candidate_seeds(&data, opts);
    let mut starts: Vec<(DVector<f64>, bool)> = base
        .iter()
        .map(|s| (pack(s, opts), s.multiplicity_flagged))
        .collect();
    let mut rng = stream(opts.seed, Purpose::FitStart, 0, 0, 0);
    let mut j = 0;
    while starts.len() < opts.starts.max(5) {
        let s = &base[j % base.len()];
        let mut perturbed = s.clone();
        for w in &mut perturbed.frequencies {
            *w *= 1.0 + rng.random_range(-opts.spread..=opts.spread);
        }
        perturbed.damping *= 1.0 + rng.random_range(-opts.spread..=opts.spread);
        let refreshed = seeded(
            &data,
            perturbed.frequencies,
            perturbed.damping,
            opts,
            s.method,
            s.multiplicity_flagged,
        );
        starts.push((pack(&refreshed, opts), s.multiplicity_flagged));
        j += 1;
    }

    let k = opts.n_modes;
    let attempts: Vec<Attempt> = starts
        .into_par_iter()
        .map(|(p0, seed_flagged)| run_start(&data, opts, p0, seed_flagged))
        .collect();

    let n_starts = attempts.len();
    let best = attempts
        .into_iter()
        .filter(|a| a.outcome.cost.is_finite())
        .reduce(|a, b| {
            let (ca, cb) = (a.outcome.cost, b.outcome.cost);
            let tie = (ca - cb).abs() <= 1e-12 * ca.max(cb).max(1e-300);
            let b_better = if tie {
                omega_norm(&b.outcome.params, k) < omega_norm(&a.outcome.params, k)
            } else {
                cb < ca
            };
            if b_better {
                b
            } else {
                a
            }
        })
        .ok_or_else(|| Error::FitInput("every start diverged".into()))?;

    Ok(finish(&data, opts, best, n_starts, n_points, t_max))
}

fn run_start(data: &Data, opts: &FitOptions, p0: DVector<f64>, seed_flagged: bool) -> Attempt {
    let model = CosineModel {
        data,
        k: opts.n_modes,
        dc: opts.dc,
        damped: opts.damped,
    };
    let outcome = minimize(&model, p0, &opts.lsq);
    if opts.damped && outcome.params[outcome.params.len() - 1] < 0.0 {
        // A growing envelope is unphysical; pin the rate at zero instead.
        let undamped = CosineModel {
            damped: false,
            ..model
        };
        let p = outcome
            .params
            .rows(0, outcome.params.len() - 1)
            .into_owned();
        let outcome = minimize(&undamped, p, &opts.lsq);
        return Attempt {
            outcome,
            damped: false,
            seed_flagged,
        };
    }
    Attempt {
        outcome,
        damped: opts.damped,
        seed_flagged,
    }
}

fn zero_fit(opts: &FitOptions, n_points: usize, t_max: f64) -> HarmonicFit {
    HarmonicFit {
        modes: (1..=opts.n_modes)
            .map(|j| Mode {
                amplitude: 0.0,
                omega: j as f64,
            })
            .collect(),
        has_dc: opts.dc,
        dc: 0.0,
        damped: opts.damped,
        damping: 0.0,
        residual_rms: 0.0,
        parameters: parameter_names(opts.n_modes, opts.dc, opts.damped),
        covariance: Vec::new(),
        iterations: 0,
        converged: true,
        starts: 0,
        flags: vec![FitFlag::Degenerate],
        n_points,
        t_max,
    }
}

fn parameter_names(k: usize, dc: bool, damped: bool) -> Vec<String> {
    let mut names: Vec<String> = (1..=k).map(|j| format!("A{j}")).collect();
    names.extend((1..=k).map(|j| format!("omega{j}")));
    if dc {
        names.push("dc".into());
    }
    if damped {
        names.push("damping".into());
    }
    names
}

fn finish(
    data: &Data,
    opts: &FitOptions,
    best: Attempt,
    starts: usize,
    n_points: usize,
    t_max: f64,
) -> HarmonicFit {
    let k = opts.n_modes;
    let p = &best.outcome.params;
    let n_free = p.len();

    // Sort modes by |ω| and carry the covariance along.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| p[k + a].abs().total_cmp(&p[k + b].abs()));
    let mut transform = DMatrix::zeros(n_free, n_free);
    for (new, &old) in order.iter().enumerate() {
        transform[(new, old)] = 1.0;
        transform[(k + new, k + old)] = p[k + old].signum();
    }
    for i in 2 * k..n_free {
        transform[(i, i)] = 1.0;
    }

    let dof = n_points.saturating_sub(n_free);
    let covariance = match best.outcome.normal.clone().try_inverse() {
        Some(inv) => {
            let scale = if data.weighted || dof == 0 {
                1.0
            } else {
                2.0 * best.outcome.cost / dof as f64
            };
            let c = &transform * inv * transform.transpose() * scale;
            (0..n_free)
                .map(|i| c.row(i).iter().copied().collect())
                .collect()
        }
        None => Vec::new(),
    };

    let modes: Vec<Mode> = order
        .iter()
        .map(|&j| Mode {
            amplitude: p[j],
            omega: p[k + j].abs(),
        })
        .collect();
    let dc = if opts.dc { p[2 * k] } else { 0.0 };
    let damping = if best.damped { p[n_free - 1] } else { 0.0 };

    let fit_model = |t: f64| {
        let s: f64 = modes
            .iter()
            .map(|m| m.amplitude * (m.omega * t).cos())
            .sum();
        (-damping * t).exp() * (dc + s)
    };
    let residual_rms = (data
        .times
        .iter()
        .zip(data.values)
        .map(|(t, y)| (fit_model(*t) - y).powi(2))
        .sum::<f64>()
        / n_points as f64)
        .sqrt();

    let mut flags = Vec::new();
    let scale = modes.last().map_or(1.0, |m| m.omega.max(1e-300));
    let coincide = modes
        .windows(2)
        .any(|w| w[1].omega - w[0].omega <= 1e-8 * scale);
    let nothing = modes.iter().all(|m| m.amplitude.abs() < 1e-12) && dc.abs() < 1e-12;
    if coincide || nothing {
        flags.push(FitFlag::Degenerate);
    }
    if modes.iter().any(|m| m.amplitude < -1e-6) || dc < -1e-6 {
        flags.push(FitFlag::NegativeAmplitude);
    }
    if !best.outcome.converged {
        flags.push(FitFlag::NotConverged);
    }
    let h = seeds::uniform_step(data.times).unwrap_or(t_max / n_points as f64);
    if modes.iter().any(|m| m.omega >= std::f64::consts::PI / h) {
        flags.push(FitFlag::AboveNyquist);
    }
    if best.seed_flagged {
        flags.push(FitFlag::SeedMultiplicity);
    }

    let mut parameters = parameter_names(k, opts.dc, best.damped);
    parameters.truncate(n_free);
    HarmonicFit {
        modes,
        has_dc: opts.dc,
        dc,
        damped: opts.damped,
        damping,
        residual_rms,
        parameters,
        covariance,
        iterations: best.outcome.iterations,
        converged: best.outcome.converged,
        starts,
        flags,
        n_points,
        t_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::{alpha1, spectral_decompose, FluxMatrix};
    use crate::hilbert::SeriesMeta;
    use crate::model::{Basis, Shots};

    const CASE1: [f64; 5] = [1.02, 1.26, 0.94, 1.36, 0.72];

    fn series(n: usize, t_max: f64, f: impl Fn(f64) -> f64) -> SampleSeries {
        let times: Vec<f64> = (1..=n).map(|j| j as f64 * t_max / n as f64).collect();
        SampleSeries {
            values: times.iter().map(|t| f(*t)).collect(),
            std_errors: vec![0.0; n],
            times,
            meta: SeriesMeta {
                n_sites: 0,
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
    fn mode_counts() {
        assert_eq!(select_mode_count(6), (3, false));
        assert_eq!(select_mode_count(2), (1, false));
        assert_eq!(select_mode_count(3), (1, true));
    }

    #[test]
    fn seed_for_single_cosine() {
        let s = series(25, std::f64::consts::PI, |t| (2.0 * t).cos());
        let g = initial_guess(&s, 1, false, false).unwrap();
        assert!((g.frequencies[0] - 2.0).abs() < 0.125);
        assert!((g.amplitudes[0] - 1.0).abs() < 0.1);
    }

    #[test]
    fn constant_series_is_dc_only() {
        let s = series(25, std::f64::consts::PI, |_| 1.0);
        let g = initial_guess(&s, 0, true, false).unwrap();
        assert_eq!(g.method, SeedMethod::DcOnly);
        assert!((g.dc - 1.0).abs() < 1e-12);
        let fit = fit_cosines(&s, &FitOptions::new(0, true, false)).unwrap();
        assert!(fit.modes.is_empty() && (fit.dc - 1.0).abs() < 1e-12 && !fit.is_flagged());
    }

    #[test]
    fn case_one_round_trip() {
        let spec = spectral_decompose(&FluxMatrix::from_off_diagonals(CASE1.to_vec())).unwrap();
        let s = series(25, std::f64::consts::PI, |t| alpha1(t, &spec));
        let fit = fit_cosines(&s, &FitOptions::for_chain(6, false)).unwrap();
        assert!(!fit.is_flagged(), "{:?}", fit.flags);
        assert!(fit.residual_rms < 1e-8);
        for (m, (l, w)) in fit
            .modes
            .iter()
            .zip(spec.frequencies.iter().zip(&spec.weights))
        {
            assert!((m.omega - 2.0 * l).abs() < 1e-6);
            assert!((m.amplitude - w).abs() < 1e-6);
        }
        let total: f64 = fit.amplitudes().iter().sum::<f64>() + fit.dc;
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn damped_round_trip() {
        let spec = spectral_decompose(&FluxMatrix::from_off_diagonals(CASE1.to_vec())).unwrap();
        let s = series(25, std::f64::consts::PI, |t| {
            (-0.4 * t).exp() * alpha1(t, &spec)
        });
        let fit = fit_cosines(&s, &FitOptions::for_chain(6, true)).unwrap();
        assert!(!fit.is_flagged(), "{:?}", fit.flags);
        assert!((fit.damping - 0.4).abs() < 1e-6);
        for (m, (l, w)) in fit
            .modes
            .iter()
            .zip(spec.frequencies.iter().zip(&spec.weights))
        {
            assert!((m.omega - 2.0 * l).abs() < 1e-6);
            assert!((m.amplitude - w).abs() < 1e-6);
        }
    }

    #[test]
    fn odd_chain_with_constant() {
        let spec =
            spectral_decompose(&FluxMatrix::from_off_diagonals(vec![0.8, 1.3, 1.1, 0.6])).unwrap();
        let s = series(25, std::f64::consts::PI, |t| alpha1(t, &spec));
        let fit = fit_cosines(&s, &FitOptions::for_chain(5, false)).unwrap();
        assert!(!fit.is_flagged(), "{:?}", fit.flags);
        assert!((fit.dc - spec.dc_weight).abs() < 1e-6);
    }

    #[test]
    fn zeros_are_degenerate() {
        let s = series(25, std::f64::consts::PI, |_| 0.0);
        let fit = fit_cosines(&s, &FitOptions::for_chain(6, false)).unwrap();
        assert!(fit.flags.contains(&FitFlag::Degenerate));
        assert!(fit.amplitudes().iter().all(|a| *a == 0.0));
    }

    #[test]
    fn negative_amplitude_is_flagged() {
        let s = series(25, std::f64::consts::PI, |t| {
            1.1 * (1.0 * t).cos() - 0.1 * (3.0 * t).cos()
        });
        let fit = fit_cosines(&s, &FitOptions::new(2, false, false)).unwrap();
        assert!(fit.flags.contains(&FitFlag::NegativeAmplitude));
    }

    #[test]
    fn too_short_series_is_rejected() {
        let s = series(5, 1.0, |t| t.cos());
        assert!(matches!(
            fit_cosines(&s, &FitOptions::for_chain(6, false)),
            Err(Error::FitInput(_))
        ));
    }
}
