//! The measurement protocol without state initialization.
//!
//! For every sampling time the chain starts in an unknown state (spin 1
//! maximally mixed, the rest drawn from the hidden-state model). Spin 1 is
//! measured once, which both yields `s0` and prepares it in `|±⟩`; after
//! evolving for `t` it is measured again, giving `s1`. The mean of `s0·s1`
//! estimates `⟨σ_1(t)⟩` for the `+` branch.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evolve::{NoisyEvolver, Workspace};
use super::state::{expect_vector, product_vector};
use super::{
    build_hamiltonian_capped, haar_state, spin1_state, DensityMatrix, Pauli, Propagator, MAX_SITES,
};
use crate::error::{Error, Result};
use crate::model::{Basis, HamiltonianSpec, NoiseModel, SamplingPlan, Shots};
use crate::stream::{stream, Purpose};

/// Distribution of the inaccessible spins 2..N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HiddenState {
    #[default]
    Haar,
    AllZeros,
    MaximallyMixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolOptions {
    pub hidden: HiddenState,
    pub site_cap: usize,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            hidden: HiddenState::Haar,
            site_cap: MAX_SITES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub n_sites: usize,
    pub basis: Basis,
    pub n_meas: Shots,
    pub runs: u32,
    pub seed: u64,
    pub noise_active: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Estimated `⟨σ_1(t)⟩` on the sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Zero in exact mode.
    pub std_errors: Vec<f64>,
    pub meta: SeriesMeta,
}

impl SampleSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn has_uncertainties(&self) -> bool {
        self.std_errors.iter().any(|s| *s > 0.0)
    }

    /// Same series with every sample multiplied by `f(t)`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for (v, t) in out.values.iter_mut().zip(&self.times) {
            *v *= f(*t);
        }
        out
    }
}

fn basis_tag(b: Basis) -> u64 {
    match b {
        Basis::X => 0,
        Basis::Y => 1,
    }
}

pub fn protocol_series(
    spec: &HamiltonianSpec,
    noise: &NoiseModel,
    plan: &SamplingPlan,
) -> Result<SampleSeries> {
    protocol_series_with(spec, noise, plan, &ProtocolOptions::default())
}

pub fn protocol_series_with(
    spec: &HamiltonianSpec,
    noise: &NoiseModel,
    plan: &SamplingPlan,
    opts: &ProtocolOptions,
) -> Result<SampleSeries> {
    let spec = spec.realized(plan.seed);
    let n = spec.n_sites();
    if n < 2 {
        return Err(Error::Validation(vec![crate::Violation::TooFewSites(n)]));
    }
    let h = build_hamiltonian_capped(&spec, opts.site_cap)?;
    let prop = Propagator::new(&h)?;
    let meta = SeriesMeta {
        n_sites: n,
        basis: plan.basis,
        n_meas: plan.n_meas,
        runs: if noise.is_active() { noise.runs } else { 1 },
        seed: plan.seed,
        noise_active: noise.is_active(),
        config_hash: None,
    };
    if noise.is_active() {
        noisy_series(&prop, noise, plan, opts, meta)
    } else {
        pure_series(&prop, plan, opts, meta)
    }
}

fn hidden_vector<R: Rng + ?Sized>(
    n_rest: usize,
    hidden: HiddenState,
    rng: &mut R,
) -> DVector<Complex64> {
    match hidden {
        HiddenState::Haar => haar_state(n_rest, rng),
        HiddenState::AllZeros => basis_vector(n_rest, 0),
        // One computational basis state, uniformly: an unbiased unraveling
        // of the maximally mixed state.
        HiddenState::MaximallyMixed => basis_vector(n_rest, rng.random_range(0..1usize << n_rest)),
    }
}

fn basis_vector(n: usize, idx: usize) -> DVector<Complex64> {
    let mut v = DVector::zeros(1 << n);
    v[idx] = Complex64::new(1.0, 0.0);
    v
}

fn shot_error(mean: f64, total: f64) -> f64 {
    ((1.0 - mean * mean).max(0.0) / total).sqrt()
}

fn pure_series(
    prop: &Propagator,
    plan: &SamplingPlan,
    opts: &ProtocolOptions,
    meta: SeriesMeta,
) -> Result<SampleSeries> {
    let n = prop.n_sites();
    let times = plan.times();
    let tag = basis_tag(plan.basis);
    let pauli = Pauli::from(plan.basis);
    let branch = |rest: &DVector<Complex64>, s: i8, t: f64| {
        let psi = product_vector(spin1_state(plan.basis, s), rest);
        expect_vector(n, &prop.evolve_state(&psi, t), 0, pauli)
    };

    let points: Vec<(f64, f64)> = times
        .par_iter()
        .enumerate()
        .map(|(j, &t)| match plan.n_meas {
            Shots::Exact => {
                // Spin 1 is maximally mixed, so each first outcome has
                // probability 1/2 and leaves |s⟩ ⊗ rest behind.
                let rests: Vec<DVector<Complex64>> = match opts.hidden {
                    HiddenState::MaximallyMixed => (0..1usize << (n - 1))
                        .map(|i| basis_vector(n - 1, i))
                        .collect(),
                    h => {
                        let mut rng = stream(plan.seed, Purpose::Hidden, j as u64, 0, tag);
                        vec![hidden_vector(n - 1, h, &mut rng)]
                    }
                };
                let sum: f64 = rests
                    .iter()
                    .map(|r| 0.5 * branch(r, 1, t) - 0.5 * branch(r, -1, t))
                    .sum();
                (sum / rests.len() as f64, 0.0)
            }
            Shots::Count(shots) => {
                let mut acc = 0i64;
                for i in 0..shots {
                    let mut rng = stream(plan.seed, Purpose::Shots, j as u64, i as u64, tag);
                    let rest = hidden_vector(n - 1, opts.hidden, &mut rng);
                    let s0: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
                    let m = branch(&rest, s0, t);
                    let s1: i64 = if rng.random::<f64>() < (1.0 + m) / 2.0 {
                        1
                    } else {
                        -1
                    };
                    acc += i64::from(s0) * s1;
                }
                let mean = acc as f64 / f64::from(shots);
                (mean, shot_error(mean, f64::from(shots)))
            }
        })
        .collect();

    Ok(SampleSeries {
        times,
        values: points.iter().map(|p| p.0).collect(),
        std_errors: points.iter().map(|p| p.1).collect(),
        meta,
    })
}

fn hidden_density<R: Rng + ?Sized>(
    n_rest: usize,
    hidden: HiddenState,
    rng: &mut R,
) -> DensityMatrix {
    match hidden {
        HiddenState::MaximallyMixed => DensityMatrix::maximally_mixed(n_rest),
        h => DensityMatrix::from_pure(n_rest, &hidden_vector(n_rest, h, rng)),
    }
}

/// Noisy runs. A run is one noise pattern over the whole window together with
/// one hidden state; every grid time of the run is read off the same
/// trajectory, and runs are independent.
fn noisy_series(
    prop: &Propagator,
    noise: &NoiseModel,
    plan: &SamplingPlan,
    opts: &ProtocolOptions,
    meta: SeriesMeta,
) -> Result<SampleSeries> {
    let n = prop.n_sites();
    let evolver = NoisyEvolver::new(prop, noise);
    let nominal = plan.times();
    let steps: Vec<usize> = nominal.iter().map(|t| evolver.steps_for(*t)).collect();
    let times: Vec<f64> = steps.iter().map(|k| *k as f64 * noise.dt).collect();
    let tag = basis_tag(plan.basis);
    let pauli = Pauli::from(plan.basis);
    let last = *steps.last().unwrap_or(&0);

    let per_run: Vec<Vec<f64>> = (0..noise.runs)
        .into_par_iter()
        .map(|r| {
            let mut hidden_rng = stream(plan.seed, Purpose::Hidden, r as u64, 1, tag);
            let rest = hidden_density(n - 1, opts.hidden, &mut hidden_rng);
            let plus = DensityMatrix::product_spin1(spin1_state(plan.basis, 1), &rest);
            let minus = DensityMatrix::product_spin1(spin1_state(plan.basis, -1), &rest);
            let mut noise_rng = stream(plan.seed, Purpose::Noise, r as u64, 0, tag);
            let mut ws = Workspace::new(plus.dim());
            let mut out = vec![0.0; steps.len()];
            let mut next = 0;

            match plan.n_meas {
                Shots::Exact => {
                    // The channel is linear, so the branch-weighted difference
                    // evolves as a single operator.
                    let mut diff = plus;
                    diff.scale(0.5);
                    diff.axpy(-0.5, &minus);
                    for k in 0..=last {
                        if k > 0 {
                            let pattern = evolver.draw_pattern(&mut noise_rng);
                            evolver.apply_step(&mut diff, &pattern, &mut ws);
                        }
                        while next < steps.len() && steps[next] == k {
                            out[next] = diff.expect(0, pauli);
                            next += 1;
                        }
                    }
                }
                Shots::Count(shots) => {
                    let (mut plus, mut minus) = (plus, minus);
                    for k in 0..=last {
                        if k > 0 {
                            let pattern = evolver.draw_pattern(&mut noise_rng);
                            evolver.apply_step(&mut plus, &pattern, &mut ws);
                            evolver.apply_step(&mut minus, &pattern, &mut ws);
                        }
                        while next < steps.len() && steps[next] == k {
                            let m = [plus.expect(0, pauli), minus.expect(0, pauli)];
                            let mut rng =
                                stream(plan.seed, Purpose::Shots, next as u64, r as u64, tag);
                            let mut acc = 0i64;
                            for _ in 0..shots {
                                let (s0, mb) = if rng.random_bool(0.5) {
                                    (1, m[0])
                                } else {
                                    (-1, m[1])
                                };
                                let s1 = if rng.random::<f64>() < (1.0 + mb) / 2.0 {
                                    1
                                } else {
                                    -1
                                };
                                acc += s0 * s1;
                            }
                            out[next] = acc as f64;
                            next += 1;
                        }
                    }
                }
            }
            out
        })
        .collect();

    let runs = f64::from(noise.runs);
    let mut values = vec![0.0; times.len()];
    for run in &per_run {
        for (v, x) in values.iter_mut().zip(run) {
            *v += x;
        }
    }
    let std_errors = match plan.n_meas {
        Shots::Exact => {
            values.iter_mut().for_each(|v| *v /= runs);
            vec![0.0; times.len()]
        }
        Shots::Count(shots) => {
            let total = runs * f64::from(shots);
            values.iter_mut().for_each(|v| *v /= total);
            values.iter().map(|m| shot_error(*m, total)).collect()
        }
    };
    Ok(SampleSeries {
        times,
        values,
        std_errors,
        meta,
    })
}
