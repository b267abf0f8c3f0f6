//! End-to-end experiments: single runs, random ensembles and sweeps.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::error::{Error, Result};
use crate::fit::{fit_cosines, FitFlag, FitOptions, HarmonicFit};
use crate::flux::FluxSpectrum;
use crate::hilbert::{protocol_series_with, ProtocolOptions, SampleSeries};
use crate::inverse::{
    deinterleave_h2, lanczos_reconstruct, refine_couplings, refine_model, spectral_data_from_fit,
    DampingModel, Reconstruction, Refinement,
};
use crate::model::{
    validate, Basis, HamiltonianSpec, NoiseModel, SamplingPlan, Shots, SpuriousTerms,
    ValidatedConfig, Variant,
};
use crate::stream::{derive_seed, stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineOptions {
    /// Direct refinement of the couplings; `None` enables it for noisy or
    /// finite-shot data.
    pub refine: Option<bool>,
    /// Damped trial function; `None` follows the noise model.
    pub damped: Option<bool>,
    /// Search for the direct fit from many starts; `None` follows `refine`.
    pub search: Option<bool>,
    /// Let decay grow along the chain in the search; `None` follows `damped`.
    pub profile: Option<bool>,
    pub protocol: ProtocolOptions,
}

impl PipelineOptions {
    /// Stages for data with the given noise and shot settings.
    pub fn steps(&self, noise_active: bool, exact_shots: bool) -> Steps {
        let refine = self.refine.unwrap_or(noise_active || !exact_shots);
        let damped = self.damped.unwrap_or(noise_active);
        Steps {
            damped,
            refine,
            search: self.search.unwrap_or(refine),
            profile: self.profile.unwrap_or(damped),
        }
    }
}

/// Spectral weights at or below this are raised to it before reconstruction
/// when refinement follows.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Everything produced for one measurement basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub basis: Basis,
    pub series: SampleSeries,
    pub fit: HarmonicFit,
    pub spectrum: Option<FluxSpectrum>,
    pub lanczos: Option<Reconstruction>,
    pub refinement: Option<Refinement>,
    /// Best direct fit over many starts.
    pub search: Option<Refinement>,
    /// Effective sequence recovered from this pass.
    pub couplings: Option<Vec<f64>>,
    pub issues: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    /// `1..` for an XX chain, `X1..`, `Y1..` for an XY chain.
    pub labels: Vec<String>,
    pub couplings_hat: Vec<f64>,
    pub couplings_true: Option<Vec<f64>>,
    pub rel_errors: Option<Vec<f64>>,
    pub max_rel_error: Option<f64>,
    pub mean_rel_error: Option<f64>,
}

impl EstimationResult {
    pub fn new(labels: Vec<String>, hat: Vec<f64>, truth: Option<Vec<f64>>) -> Self {
        let rel: Option<Vec<f64>> = truth.as_ref().map(|t| {
            hat.iter()
                .zip(t)
                .map(|(h, j)| (h - j).abs() / j.abs())
                .collect()
        });
        let max = rel
            .as_ref()
            .map(|r| r.iter().fold(0.0f64, |m, x| m.max(*x)));
        let mean = rel
            .as_ref()
            .map(|r| r.iter().sum::<f64>() / r.len().max(1) as f64);
        Self {
            labels,
            couplings_hat: hat,
            couplings_true: truth,
            rel_errors: rel,
            max_rel_error: max,
            mean_rel_error: mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub n_sites: usize,
    pub passes: Vec<PassReport>,
    pub estimate: Option<EstimationResult>,
    pub flagged: bool,
    /// Only `|J|` is identifiable; estimates take the positive branch.
    pub sign_convention: String,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl ExperimentReport {
    pub fn max_rel_error(&self) -> Option<f64> {
        self.estimate.as_ref().and_then(|e| e.max_rel_error)
    }

    pub fn mean_rel_error(&self) -> Option<f64> {
        self.estimate.as_ref().and_then(|e| e.mean_rel_error)
    }
}

/// Ground-truth labels and values of a spec.
pub fn truth(spec: &HamiltonianSpec) -> (Vec<String>, Vec<f64>) {
    match &spec.variant {
        Variant::Xx(c) => (
            (1..=c.couplings.len()).map(|i| i.to_string()).collect(),
            c.couplings.clone(),
        ),
        Variant::Xy { jx, jy } => {
            let mut labels: Vec<String> =
                (1..=jx.couplings.len()).map(|i| format!("X{i}")).collect();
            labels.extend((1..=jy.couplings.len()).map(|i| format!("Y{i}")));
            let values = jx.couplings.iter().chain(&jy.couplings).copied().collect();
            (labels, values)
        }
    }
}

/// Fit and invert one series of an `n_sites` chain.
pub fn invert_series(
    series: SampleSeries,
    n_sites: usize,
    steps: Steps,
    seed: u64,
) -> Result<PassReport> {
    let mut fit_opts = FitOptions::for_chain(n_sites, steps.damped);
    fit_opts.seed = seed;
    let fit = fit_cosines(&series, &fit_opts)?;
    Ok(invert_fit(series, fit, n_sites, steps))
}

/// Seed of the cosine fit for a run with master `seed`.
pub fn fit_seed(seed: u64, basis: Basis) -> u64 {
    derive_seed(seed, Purpose::FitStart, basis as u64, 0, 0)
}

/// Which stages follow the cosine fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Steps {
    pub damped: bool,
    pub refine: bool,
    pub search: bool,
    pub profile: bool,
}

/// Invert an existing fit, refining against `series` when asked.
pub fn invert_fit(
    series: SampleSeries,
    fit: HarmonicFit,
    n_sites: usize,
    steps: Steps,
) -> PassReport {
    let refine = steps.refine;
    let mut issues = Vec::new();
    let spectrum = match spectral_data_from_fit(&fit, n_sites) {
        Ok(s) => Some(s),
        Err(e) if refine && fit.modes.len() == n_sites / 2 => {
            // Good enough as a starting point for the direct fit.
            issues.push(format!(
                "{e}; weights floored at {WEIGHT_FLOOR} for the starting point"
            ));
            Some(floored_spectrum(&fit))
        }
        Err(e) => {
            issues.push(e.to_string());
            None
        }
    };
    let lanczos = spectrum
        .as_ref()
        .and_then(|s| match lanczos_reconstruct(s, n_sites) {
            Ok(r) => Some(r),
            Err(e) => {
                issues.push(e.to_string());
                None
            }
        });
    let refinement = match (&lanczos, refine) {
        (Some(r), true) => {
            let damping = fit.damped.then_some(fit.damping);
            match refine_couplings(&series, &r.couplings, damping) {
                Ok(x) => {
                    if !x.converged {
                        issues.push("refinement did not converge".into());
                    }
                    Some(x)
                }
                Err(e) => {
                    issues.push(e.to_string());
                    None
                }
            }
        }
        _ => None,
    };
    let search = if steps.search {
        let model = match (fit.damped, steps.profile) {
            (false, _) => DampingModel::None,
            (true, false) => DampingModel::Uniform,
            (true, true) => DampingModel::Profile,
        };
        let gamma = refinement.as_ref().map_or(fit.damping, |r| r.damping);
        let mut starts: Vec<(Vec<f64>, f64)> = refinement
            .iter()
            .map(|r| r.couplings.clone())
            .chain(lanczos.iter().map(|r| r.couplings.clone()))
            .map(|b| (b, gamma))
            .collect();
        // The envelope fit can be far off; other starts find their own rates.
        starts.extend(
            alternative_starts(&series, &fit, n_sites)
                .into_iter()
                .map(|b| (b, 0.0)),
        );
        let best = best_direct(&series, &starts, model);
        if best.is_none() {
            issues.push("no direct fit succeeded".into());
        }
        best
    } else {
        None
    };
    let couplings = search
        .as_ref()
        .or(refinement.as_ref())
        .map(|r| r.couplings.clone())
        .or_else(|| lanczos.as_ref().map(|r| r.couplings.clone()));
    PassReport {
        basis: series.meta.basis,
        series,
        fit,
        spectrum,
        lanczos,
        refinement,
        search,
        couplings,
        issues,
    }
}

/// Perturbation rounds around the best direct fit found from the starts.
pub const SEARCH_HOPS: usize = 24;

fn lowest(rs: impl IntoIterator<Item = Refinement>) -> Option<Refinement> {
    rs.into_iter()
        .filter(|r| r.final_rms.is_finite())
        .reduce(|a, b| if b.final_rms < a.final_rms { b } else { a })
}

/// Direct fit from every start, then basin hopping: the best couplings are
/// scattered by up to ±30% and refit, keeping improvements.
fn best_direct(
    series: &SampleSeries,
    starts: &[(Vec<f64>, f64)],
    model: DampingModel,
) -> Option<Refinement> {
    let mut best = lowest(
        starts
            .par_iter()
            .filter_map(|(b0, d0)| refine_model(series, b0, model, &[*d0, 0.0]).ok())
            .collect::<Vec<_>>(),
    )?;
    let mut rng = stream(series.meta.seed, Purpose::FitStart, 2, 0, 0);
    let batch = 4;
    for _ in 0..SEARCH_HOPS / batch {
        let trials: Vec<Vec<f64>> = (0..batch)
            .map(|_| {
                best.couplings
                    .iter()
                    .map(|b| b * rng.random_range(0.7..=1.3))
                    .collect()
            })
            .collect();
        let (d0, d1) = (best.damping, best.damping_slope);
        let found = lowest(
            trials
                .par_iter()
                .filter_map(|b0| refine_model(series, b0, model, &[d0, d1]).ok())
                .collect::<Vec<_>>(),
        );
        if let Some(r) = found {
            if r.final_rms < best.final_rms {
                best = r;
            }
        }
    }
    Some(best)
}

/// Random starts for the direct fit besides the inverted cosine fits.
pub const SEARCH_RANDOM_STARTS: usize = 12;

/// Extra starting couplings for the direct fit: the inversion of an
/// undamped fit, a uniform chain with the same top frequency, and random
/// chains of that scale.
fn alternative_starts(series: &SampleSeries, fit: &HarmonicFit, n_sites: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    if let Ok(undamped) = fit_cosines(series, &FitOptions::for_chain(n_sites, false)) {
        let spectrum = spectral_data_from_fit(&undamped, n_sites)
            .unwrap_or_else(|_| floored_spectrum(&undamped));
        if let Ok(r) = lanczos_reconstruct(&spectrum, n_sites) {
            out.push(r.couplings);
        }
    }
    // Scale from the fastest mode that carries real weight.
    if let Some(top) = fit
        .modes
        .iter()
        .rev()
        .find(|m| m.amplitude > 0.05)
        .or(fit.modes.last())
    {
        let c = 0.25 * top.omega / (std::f64::consts::PI / (n_sites + 1) as f64).cos();
        if c.is_finite() && c > 0.0 {
            out.push(vec![c; n_sites - 1]);
            let mut rng = stream(series.meta.seed, Purpose::FitStart, 1, 0, 0);
            for _ in 0..SEARCH_RANDOM_STARTS {
                out.push(
                    (1..n_sites)
                        .map(|_| c * rng.random_range(0.5..=1.5))
                        .collect(),
                );
            }
        }
    }
    out
}

fn floored_spectrum(fit: &HarmonicFit) -> FluxSpectrum {
    let amps: Vec<f64> = fit
        .amplitudes()
        .iter()
        .map(|a| a.max(WEIGHT_FLOOR))
        .collect();
    let dc = if fit.has_dc {
        fit.dc.max(WEIGHT_FLOOR)
    } else {
        0.0
    };
    let total = amps.iter().sum::<f64>() + dc;
    let mut freqs: Vec<f64> = fit.frequencies().iter().map(|w| w / 2.0).collect();
    for j in 1..freqs.len() {
        if freqs[j] <= freqs[j - 1] {
            freqs[j] = freqs[j - 1] * (1.0 + 1e-3);
        }
    }
    FluxSpectrum {
        frequencies: freqs,
        weights: amps.iter().map(|a| a / total).collect(),
        dc_weight: dc / total,
        merged: false,
    }
}

/// Couplings from one pass (XX) or an X and a Y pass (XY, returned as
/// `jx` followed by `jy`).
pub fn combine_passes(passes: &[PassReport]) -> Option<Vec<f64>> {
    match passes {
        [x] => x.couplings.clone(),
        [x, y] => match (&x.couplings, &y.couplings) {
            (Some(bx), Some(by)) => {
                let (jx, jy) = deinterleave_h2(bx, by);
                Some(jx.into_iter().chain(jy).collect())
            }
            _ => None,
        },
        _ => None,
    }
}

/// No couplings, an issue along the way, or a fit flag other than a short
/// periodogram.
pub fn pass_is_flagged(p: &PassReport) -> bool {
    p.couplings.is_none()
        || !p.issues.is_empty()
        || p.fit.flags.iter().any(|f| *f != FitFlag::SeedMultiplicity)
}

/// Full protocol for a validated configuration.
pub fn run_tomography(cfg: &ValidatedConfig, opts: &PipelineOptions) -> Result<ExperimentReport> {
    let start = Instant::now();
    let (spec, noise, plan) = (cfg.spec(), cfg.noise(), cfg.plan());
    let n = spec.n_sites();
    let steps = opts.steps(noise.is_active(), plan.n_meas.is_exact());
    let hash = config_hash(cfg)?;

    let bases: &[Basis] = if spec.is_xy() {
        &[Basis::X, Basis::Y]
    } else {
        &[Basis::X]
    };
    let mut passes = Vec::with_capacity(bases.len());
    for &basis in bases {
        let pass_plan = SamplingPlan { basis, ..*plan };
        let mut series = protocol_series_with(spec, noise, &pass_plan, &opts.protocol)?;
        series.meta.config_hash = Some(hash.clone());
        passes.push(invert_series(series, n, steps, fit_seed(plan.seed, basis))?);
    }

    let (labels, values) = truth(spec);
    let estimate = combine_passes(&passes).map(|h| EstimationResult::new(labels, h, Some(values)));
    let flagged = estimate.is_none() || passes.iter().any(pass_is_flagged);
    Ok(ExperimentReport {
        config_hash: hash,
        seed: plan.seed,
        n_sites: n,
        passes,
        estimate,
        flagged,
        sign_convention: "positive".into(),
        wall_time: start.elapsed(),
    })
}

/// [`run_tomography`] on unvalidated parts.
pub fn run_parts(
    spec: &HamiltonianSpec,
    noise: &NoiseModel,
    plan: &SamplingPlan,
    opts: &PipelineOptions,
) -> Result<ExperimentReport> {
    run_tomography(&validate(spec, noise, plan)?, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub index: usize,
    pub seed: u64,
    pub couplings_true: Vec<f64>,
    pub couplings_hat: Option<Vec<f64>>,
    pub max_rel_error: Option<f64>,
    pub mean_rel_error: Option<f64>,
    pub flagged: bool,
}

/// Statistics over trials. Errors are `None` when no trial produced an
/// estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub n_sites: usize,
    pub master_seed: u64,
    pub trials: Vec<TrialReport>,
    /// Over every coupling of every trial.
    pub mean_rel_error: Option<f64>,
    pub max_rel_error: Option<f64>,
    pub median_max_rel_error: Option<f64>,
    pub flagged_trials: usize,
}

/// Derived seed for a trial configuration, kept below `2^63` so the
/// configuration stays expressible as TOML.
fn trial_seed(master: u64, index: u64, kind: u64) -> u64 {
    derive_seed(master, Purpose::Trial, index, kind, 0) & (i64::MAX as u64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Random XX chains with couplings uniform in `range`, each run through
/// [`run_tomography`]. Trial `i` depends only on `(plan.seed, i)`.
pub fn batch_random(
    n_trials: usize,
    n_sites: usize,
    range: (f64, f64),
    plan: &SamplingPlan,
    noise: &NoiseModel,
    opts: &PipelineOptions,
) -> Result<BatchReport> {
    if n_trials == 0 {
        return Err(Error::FitInput("batch needs at least one trial".into()));
    }
    if !(range.0 > 0.0 && range.1 >= range.0) {
        return Err(Error::FitInput(format!("invalid coupling range {range:?}")));
    }
    let master = plan.seed;
    let trials: Vec<TrialReport> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(master, Purpose::Trial, i as u64, 0, 0);
            let couplings: Vec<f64> = (0..n_sites.saturating_sub(1))
                .map(|_| rng.random_range(range.0..=range.1))
                .collect();
            let seed = trial_seed(master, i as u64, 1);
            let trial_plan = SamplingPlan { seed, ..*plan };
            let spec = HamiltonianSpec::xx(couplings.clone());
            let report = run_parts(&spec, noise, &trial_plan, opts)?;
            Ok(TrialReport {
                index: i,
                seed,
                couplings_true: couplings,
                couplings_hat: report.estimate.as_ref().map(|e| e.couplings_hat.clone()),
                max_rel_error: report.max_rel_error(),
                mean_rel_error: report.mean_rel_error(),
                flagged: report.flagged,
            })
        })
        .collect::<Result<_>>()?;

    let all: Vec<f64> = trials
        .iter()
        .filter_map(|t| {
            t.couplings_hat.as_ref().map(|h| {
                h.iter()
                    .zip(&t.couplings_true)
                    .map(|(a, b)| (a - b).abs() / b)
                    .collect::<Vec<_>>()
            })
        })
        .flatten()
        .collect();
    let maxes: Vec<f64> = trials.iter().filter_map(|t| t.max_rel_error).collect();
    Ok(BatchReport {
        n_sites,
        master_seed: master,
        mean_rel_error: (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64),
        max_rel_error: all.iter().copied().reduce(f64::max),
        median_max_rel_error: median(&maxes),
        flagged_trials: trials.iter().filter(|t| t.flagged).count(),
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDimension {
    NMeas,
    Gamma,
    BigGamma,
    Spurious,
}

impl SweepDimension {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepDimension::NMeas => "n_meas",
            SweepDimension::Gamma => "gamma",
            SweepDimension::BigGamma => "big_gamma",
            SweepDimension::Spurious => "spurious",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "n_meas" => Some(Self::NMeas),
            "gamma" => Some(Self::Gamma),
            "big_gamma" => Some(Self::BigGamma),
            "spurious" => Some(Self::Spurious),
            _ => None,
        }
    }

    /// Base configuration with this dimension set to `value`.
    /// For `n_meas`, zero means exact expectation values.
    pub fn apply(self, base: &ValidatedConfig, value: f64) -> Result<ValidatedConfig> {
        match self {
            SweepDimension::NMeas => {
                let n_meas = if value == 0.0 {
                    Shots::Exact
                } else if value >= 1.0 && value.fract() == 0.0 && value <= f64::from(u32::MAX) {
                    Shots::Count(value as u32)
                } else {
                    return Err(Error::FitInput(format!(
                        "n_meas value {value} is not a count"
                    )));
                };
                base.with_plan(SamplingPlan {
                    n_meas,
                    ..*base.plan()
                })
            }
            SweepDimension::Gamma => base.with_noise(NoiseModel {
                gamma: value,
                ..*base.noise()
            }),
            SweepDimension::BigGamma => base.with_noise(NoiseModel {
                big_gamma: value,
                ..*base.noise()
            }),
            SweepDimension::Spurious => base.with_spec(
                base.spec()
                    .clone()
                    .with_spurious(SpuriousTerms::random(value)),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub repeats: usize,
    pub max_rel_errors: Vec<f64>,
    pub mean_max_rel_error: Option<f64>,
    pub median_max_rel_error: Option<f64>,
    pub max_max_rel_error: Option<f64>,
    pub mean_mean_rel_error: Option<f64>,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub dimension: SweepDimension,
    pub rows: Vec<SweepRow>,
}

/// Error statistics versus one swept parameter. Repeat `r` uses the same
/// seed at every value.
pub fn sweep(
    dimension: SweepDimension,
    values: &[f64],
    base: &ValidatedConfig,
    repeats: usize,
    opts: &PipelineOptions,
) -> Result<SweepTable> {
    let repeats = repeats.max(1);
    let configs: Vec<ValidatedConfig> = values
        .iter()
        .map(|v| dimension.apply(base, *v))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|v| (0..repeats).map(move |r| (v, r)))
        .collect();
    let reports: Vec<(usize, Option<f64>, Option<f64>, bool)> = jobs
        .into_par_iter()
        .map(|(v, r)| {
            let cfg = &configs[v];
            let seed = trial_seed(base.plan().seed, r as u64, 2);
            let cfg = cfg.with_plan(SamplingPlan {
                seed,
                ..*cfg.plan()
            })?;
            let rep = run_tomography(&cfg, opts)?;
            Ok((v, rep.max_rel_error(), rep.mean_rel_error(), rep.flagged))
        })
        .collect::<Result<_>>()?;

    let rows = values
        .iter()
        .enumerate()
        .map(|(v, &value)| {
            let mine: Vec<_> = reports.iter().filter(|x| x.0 == v).collect();
            let maxes: Vec<f64> = mine.iter().filter_map(|x| x.1).collect();
            let means: Vec<f64> = mine.iter().filter_map(|x| x.2).collect();
            SweepRow {
                value,
                repeats,
                mean_max_rel_error: (!maxes.is_empty())
                    .then(|| maxes.iter().sum::<f64>() / maxes.len() as f64),
                median_max_rel_error: median(&maxes),
                max_max_rel_error: maxes.iter().copied().reduce(f64::max),
                mean_mean_rel_error: (!means.is_empty())
                    .then(|| means.iter().sum::<f64>() / means.len() as f64),
                flagged: mine.iter().filter(|x| x.3).count(),
                max_rel_errors: maxes,
            }
        })
        .collect();
    Ok(SweepTable { dimension, rows })
}
