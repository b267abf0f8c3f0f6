//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test --release --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fluxtomo::flux::{alpha1, build_flux_matrix, spectral_decompose, FluxMatrix};
use fluxtomo::hilbert::{
    amplitude_damping_kraus, apply_amplitude_damping, apply_dephasing, dephasing_kraus, haar_state,
    kraus_completeness_error, protocol_series, protocol_series_with, DensityMatrix, HiddenState,
    Pauli, ProtocolOptions,
};
use fluxtomo::inverse::lanczos_reconstruct;
use fluxtomo::model::{
    thermal_p, Basis, HamiltonianSpec, NoiseModel, SamplingPlan, Shots, SpuriousTerms,
};
use fluxtomo::pipeline::{batch_random, median, run_parts, PipelineOptions};
use fluxtomo::stream::{stream, Purpose};
use rand::Rng;
use rayon::prelude::*;

const CASES: [[f64; 5]; 3] = [
    [1.02, 1.26, 0.94, 1.36, 0.72],
    [1.49, 0.80, 1.02, 0.69, 1.28],
    [1.30, 0.80, 1.23, 0.75, 0.96],
];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn ideal_cases(n_points: usize, tol: f64, limit_s: u64) -> Verdict {
    let t0 = Instant::now();
    let plan = SamplingPlan {
        n_points,
        ..Default::default()
    };
    let errs: Vec<f64> = CASES
        .iter()
        .map(|c| {
            let r = run_parts(
                &HamiltonianSpec::xx(c.to_vec()),
                &NoiseModel::none(),
                &plan,
                &PipelineOptions::default(),
            )
            .expect("ideal run");
            r.max_rel_error().unwrap_or(f64::INFINITY)
        })
        .collect();
    let el = t0.elapsed();
    verdict(
        errs.iter().all(|e| *e < tol) && within(el, limit_s),
        format!(
            "max rel errors {} (< {tol}), {:.1} s (< {limit_s} s)",
            sci(&errs),
            el.as_secs_f64()
        ),
    )
}

fn c1_ideal() -> Verdict {
    ideal_cases(25, 5e-3, 30)
}

fn c2_random_ensemble() -> Verdict {
    let t0 = Instant::now();
    let plan = SamplingPlan {
        seed: 2024,
        ..Default::default()
    };
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [4, 6, 8] {
        let b = batch_random(
            20,
            n,
            (0.5, 1.5),
            &plan,
            &NoiseModel::none(),
            &PipelineOptions::default(),
        )
        .expect("batch");
        let mean = b.mean_rel_error.unwrap_or(f64::INFINITY);
        pass &= mean < 5e-3 && b.trials.iter().all(|t| t.couplings_hat.is_some());
        parts.push(format!(
            "N={n} mean {mean:.2e} worst {:.2e}",
            b.max_rel_error.unwrap_or(f64::NAN)
        ));
    }
    let el = t0.elapsed();
    verdict(
        pass && within(el, 300),
        format!(
            "{} (< 5e-3), {:.1} s (< 300 s)",
            parts.join(", "),
            el.as_secs_f64()
        ),
    )
}

fn c3_ten_points() -> Verdict {
    ideal_cases(10, 1e-2, 30)
}

/// Max relative error per case and seed.
fn noisy_maxes(n_meas: Shots, seeds: u64) -> Vec<Vec<f64>> {
    CASES
        .iter()
        .map(|c| {
            (0..seeds)
                .map(|seed| {
                    let plan = SamplingPlan {
                        seed,
                        n_meas,
                        ..Default::default()
                    };
                    run_parts(
                        &HamiltonianSpec::xx(c.to_vec()),
                        &NoiseModel::reference(),
                        &plan,
                        &PipelineOptions::default(),
                    )
                    .expect("noisy run")
                    .max_rel_error()
                    .unwrap_or(f64::INFINITY)
                })
                .collect()
        })
        .collect()
}

fn per_case_medians(maxes: &[Vec<f64>], tol: f64) -> (bool, String) {
    let meds: Vec<f64> = maxes
        .iter()
        .map(|m| median(m).unwrap_or(f64::INFINITY))
        .collect();
    let worst = maxes.iter().flatten().fold(0.0f64, |a, b| a.max(*b));
    (
        meds.iter().all(|m| *m < tol),
        format!("median max errors {meds:.3?} (< {tol}), worst single run {worst:.3}"),
    )
}

fn c4_noisy() -> Verdict {
    let t0 = Instant::now();
    let (pass, detail) = per_case_medians(&noisy_maxes(Shots::Exact, 5), 0.08);
    let el = t0.elapsed();
    verdict(
        pass && within(el, 600),
        format!("{detail}, {:.1} s (< 600 s)", el.as_secs_f64()),
    )
}

fn c5_finite_shots() -> Verdict {
    let (pass, detail) = per_case_medians(&noisy_maxes(Shots::Count(500), 5), 0.15);
    verdict(pass, detail)
}

fn c6_spurious() -> Verdict {
    let seeds = 10u64;
    let pool = |mag: f64| -> Vec<Vec<f64>> {
        CASES
            .iter()
            .map(|c| {
                (0..seeds)
                    .map(|seed| {
                        let spec = HamiltonianSpec::xx(c.to_vec())
                            .with_spurious(SpuriousTerms::random(mag));
                        let plan = SamplingPlan {
                            seed,
                            n_meas: Shots::Count(500),
                            ..Default::default()
                        };
                        run_parts(
                            &spec,
                            &NoiseModel::none(),
                            &plan,
                            &PipelineOptions::default(),
                        )
                        .expect("spurious run")
                        .max_rel_error()
                        .unwrap_or(f64::INFINITY)
                    })
                    .collect()
            })
            .collect()
    };
    let clean = pool(0.0);
    let dirty = pool(0.1);
    let (pass, detail) = per_case_medians(&dirty, 0.15);
    let m0 = median(&clean.concat()).unwrap();
    let m1 = median(&dirty.concat()).unwrap();
    verdict(
        pass && m0 < m1,
        format!("at 0.1J {detail}; pooled median 0: {m0:.4} < 0.1J: {m1:.4}"),
    )
}

fn random_couplings<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.5..=1.5)).collect()
}

fn c7_oracle() -> Verdict {
    let worst = (2..=7usize)
        .into_par_iter()
        .flat_map(|n| (0..50u64).into_par_iter().map(move |set| (n, set)))
        .map(|(n, set)| {
            let mut rng = stream(7, Purpose::Trial, n as u64, set, 0);
            let specs = [
                HamiltonianSpec::xx(random_couplings(&mut rng, n - 1)),
                HamiltonianSpec::xy(
                    random_couplings(&mut rng, n - 1),
                    random_couplings(&mut rng, n - 1),
                ),
            ];
            let mut worst = 0.0f64;
            for spec in &specs {
                for basis in [Basis::X, Basis::Y] {
                    let s = spectral_decompose(&build_flux_matrix(spec, basis).unwrap()).unwrap();
                    for hidden in 0..10u64 {
                        let plan = SamplingPlan {
                            basis,
                            seed: hidden,
                            ..Default::default()
                        };
                        let opts = ProtocolOptions {
                            hidden: HiddenState::Haar,
                            ..Default::default()
                        };
                        let series =
                            protocol_series_with(spec, &NoiseModel::none(), &plan, &opts).unwrap();
                        for (t, v) in series.times.iter().zip(&series.values) {
                            worst = worst.max((alpha1(*t, &s) - v).abs());
                        }
                    }
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    verdict(
        worst < 1e-8,
        format!("max |alpha1 - simulated| = {worst:.2e} (< 1e-8)"),
    )
}

fn c8_norm() -> Verdict {
    let mut rng = stream(8, Purpose::Trial, 0, 0, 0);
    let plan = SamplingPlan::default();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=12usize);
        let m = FluxMatrix::from_off_diagonals(random_couplings(&mut rng, n - 1));
        for t in std::iter::once(0.0).chain(plan.times()) {
            let a = m.coefficients(t).unwrap();
            worst = worst.max((a.norm_squared() - 1.0).abs());
        }
    }
    verdict(
        worst < 1e-10,
        format!("max |sum alpha_j^2 - 1| = {worst:.2e} (< 1e-10)"),
    )
}

fn c9_round_trip() -> Verdict {
    let mut rng = stream(9, Purpose::Trial, 0, 0, 0);
    let (mut err, mut resid) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=10usize);
        let b = random_couplings(&mut rng, n - 1);
        let s = spectral_decompose(&FluxMatrix::from_off_diagonals(b.clone())).unwrap();
        let r = lanczos_reconstruct(&s, n).unwrap();
        for (x, y) in r.couplings.iter().zip(&b) {
            err = err.max((x - y).abs() / y);
        }
        resid = resid.max(r.diagonal_residual);
    }
    verdict(
        err < 1e-10 && resid < 1e-8,
        format!(
            "max rel coupling error {err:.2e} (< 1e-10), diagonal residual {resid:.2e} (< 1e-8)"
        ),
    )
}

fn c10_channels() -> Verdict {
    let mut rng = stream(10, Purpose::Trial, 0, 0, 0);
    let (mut complete, mut maps) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let gt = rng.random_range(0.0..3.0);
        let bt = rng.random_range(0.0..3.0);
        let nbar = rng.random_range(0.0..2.0);
        complete = complete
            .max(kraus_completeness_error(&dephasing_kraus(gt)))
            .max(kraus_completeness_error(&amplitude_damping_kraus(bt, nbar)));

        let n = rng.random_range(1..=3usize);
        let site = rng.random_range(0..n);
        let rho = DensityMatrix::from_pure(n, &haar_state(n, &mut rng));
        let [x, y, z] = [Pauli::X, Pauli::Y, Pauli::Z].map(|p| rho.expect(site, p));

        let mut d = rho.clone();
        apply_dephasing(&mut d, site, gt);
        let e = (-gt).exp();
        maps = maps
            .max((d.expect(site, Pauli::X) - e * x).abs())
            .max((d.expect(site, Pauli::Y) - e * y).abs())
            .max((d.expect(site, Pauli::Z) - z).abs());

        let mut a = rho.clone();
        apply_amplitude_damping(&mut a, site, bt, nbar);
        let (e, h) = ((-bt).exp(), (-bt / 2.0).exp());
        let p = thermal_p(nbar);
        maps = maps
            .max((a.expect(site, Pauli::X) - h * x).abs())
            .max((a.expect(site, Pauli::Y) - h * y).abs())
            .max((a.expect(site, Pauli::Z) - ((1.0 - e) * (2.0 * p - 1.0) + e * z)).abs());
    }
    verdict(
        complete < 1e-12 && maps < 1e-12,
        format!("completeness {complete:.2e}, expectation maps {maps:.2e} (< 1e-12)"),
    )
}

fn c11_shot_scaling() -> Verdict {
    let spec = HamiltonianSpec::xx(CASES[0].to_vec());
    let exact = protocol_series(&spec, &NoiseModel::none(), &SamplingPlan::default()).unwrap();
    let rms = |shots: u32| -> f64 {
        let sq: Vec<f64> = (0..20u64)
            .into_par_iter()
            .flat_map_iter(|seed| {
                let plan = SamplingPlan {
                    seed,
                    n_meas: Shots::Count(shots),
                    ..Default::default()
                };
                let s = protocol_series(&spec, &NoiseModel::none(), &plan).unwrap();
                s.values
                    .iter()
                    .zip(&exact.values)
                    .map(|(a, b)| (a - b).powi(2))
                    .collect::<Vec<_>>()
            })
            .collect();
        (sq.iter().sum::<f64>() / sq.len() as f64).sqrt()
    };
    let (r1, r4) = (rms(200), rms(800));
    let ratio = r4 / r1;
    verdict(
        (0.4..=0.6).contains(&ratio),
        format!("rms {r1:.4} at 200 shots, {r4:.4} at 800, ratio {ratio:.3} (0.5 +- 20%)"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("ideal tomography", c1_ideal),
        ("random ensemble", c2_random_ensemble),
        ("ten points", c3_ten_points),
        ("noisy tomography", c4_noisy),
        ("finite measurements", c5_finite_shots),
        ("spurious robustness", c6_spurious),
        ("oracle equivalence", c7_oracle),
        ("norm conservation", c8_norm),
        ("inverse round trip", c9_round_trip),
        ("channel correctness", c10_channels),
        ("shot-noise scaling", c11_shot_scaling),
    ];
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let k = i + 1;
        if !filter.is_empty() && !filter.contains(&k) {
            continue;
        }
        let v = check();
        println!(
            "{} {k:>2} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
