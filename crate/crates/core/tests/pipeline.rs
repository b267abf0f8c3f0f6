use fluxtomo::config::load_config;
use fluxtomo::model::{HamiltonianSpec, NoiseModel, SamplingPlan, Shots};
use fluxtomo::pipeline::{batch_random, run_parts, run_tomography, PipelineOptions};

#[test]
fn identical_seeds_give_identical_reports() {
    let cfg = load_config(
        "[chain]\nvariant = \"xx\"\ncouplings = [1.1, 0.7, 1.3]\n[sampling]\nn_meas = 400\nseed = 9\n",
    )
    .unwrap();
    let a = run_tomography(&cfg, &PipelineOptions::default()).unwrap();
    let b = run_tomography(&cfg, &PipelineOptions::default()).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let plan = SamplingPlan {
        seed: 4,
        n_meas: Shots::Count(300),
        ..Default::default()
    };
    let run = || {
        batch_random(
            4,
            4,
            (0.5, 1.5),
            &plan,
            &NoiseModel::none(),
            &PipelineOptions::default(),
        )
        .unwrap()
    };
    let wide = run();
    let narrow = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(run);
    assert_eq!(wide, narrow);
}

#[test]
fn xx_chain_through_the_xy_path() {
    let j = vec![0.9, 1.3, 0.6, 1.1, 1.2];
    let plan = SamplingPlan::default();
    let opts = PipelineOptions::default();
    let xx = run_parts(
        &HamiltonianSpec::xx(j.clone()),
        &NoiseModel::none(),
        &plan,
        &opts,
    )
    .unwrap();
    let xy = run_parts(
        &HamiltonianSpec::xy(j.clone(), j.clone()),
        &NoiseModel::none(),
        &plan,
        &opts,
    )
    .unwrap();
    let a = xx.estimate.unwrap().couplings_hat;
    let b = xy.estimate.unwrap().couplings_hat;
    for i in 0..j.len() {
        assert!((a[i] - b[i]).abs() < 1e-8);
        assert!((a[i] - b[i + j.len()]).abs() < 1e-8);
    }
}

#[test]
fn ideal_round_trip_on_random_chains() {
    let plan = SamplingPlan {
        seed: 77,
        ..Default::default()
    };
    for n in [3, 5, 6] {
        let b = batch_random(
            50,
            n,
            (0.5, 1.5),
            &plan,
            &NoiseModel::none(),
            &PipelineOptions::default(),
        )
        .unwrap();
        assert_eq!(b.flagged_trials, 0, "N={n}");
        assert!(
            b.max_rel_error.unwrap() < 1e-6,
            "N={n}: {:?}",
            b.max_rel_error
        );
    }
}
