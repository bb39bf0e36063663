use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prdl_core::bench::{run_distance_ablation, run_loss_comparison, ScenarioSpec};
use prdl_core::fitting::{FitConfig, GeometricLoss};

#[test]
fn toy_recovery_from_random_perturbed_init() {
    let spec = ScenarioSpec::toy();
    let mut ious = Vec::new();
    for seed in 0..5 {
        let mut sc = spec.build(seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut init = sc.model.zero_params();
        for v in init.id.iter_mut().chain(init.exp.iter_mut()) {
            *v = rng.random_range(-0.5..0.5);
        }
        init.angles = [0.0, 0.0, rng.random_range(-0.05..0.05)];
        init.translation = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0];
        sc.init = init;
        ious.push(sc.run(&sc.config).unwrap().mean_iou());
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    assert!(mean >= 0.90, "{ious:?}");
}

#[test]
fn loss_drops_within_two_hundred_iterations() {
    let spec = ScenarioSpec::toy();
    let mut dropped = 0;
    for seed in 0..20 {
        let sc = spec.build(seed).unwrap();
        let cfg = FitConfig { max_iters: 201, ..sc.config.clone() };
        let r = sc.run(&cfg).unwrap();
        let first = r.iterations[0].total;
        let at200 = r.iterations.get(200).or(r.iterations.last()).unwrap().total;
        dropped += usize::from(at200 < first);
    }
    assert!(dropped >= 19, "{dropped}/20");
}

#[test]
fn comparison_of_a_loss_with_itself_gives_identical_rows() {
    let mut spec = ScenarioSpec::toy();
    spec.fit.max_iters = 60;
    let sc = spec.build_all().unwrap();
    let t = run_loss_comparison(&sc[..2], &[GeometricLoss::Prdl, GeometricLoss::Prdl], 1).unwrap();
    for pair in t.rows.chunks(2) {
        assert_eq!(pair[0].final_total.to_bits(), pair[1].final_total.to_bits());
        assert_eq!(pair[0].curve, pair[1].curve);
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut spec = ScenarioSpec::toy();
    spec.fit.max_iters = 40;
    spec.seeds = vec![0, 1, 2];
    let sc = spec.build_all().unwrap();
    let one = run_loss_comparison(&sc, &spec.losses, 1).unwrap();
    let three = run_loss_comparison(&sc, &spec.losses, 3).unwrap();
    assert_eq!(one.to_csv(), three.to_csv());
    assert_eq!(run_distance_ablation(&sc, 1).unwrap(), run_distance_ablation(&sc, 2).unwrap());
}

#[test]
fn ablation_on_a_solved_scenario_scores_near_one() {
    let mut spec = ScenarioSpec::toy();
    spec.seeds = vec![4, 9];
    spec.fit.max_iters = 5;
    spec.fit.lr = 1e-6;
    spec.fit.lr_final = None;
    let sc: Vec<_> = spec
        .build_all()
        .unwrap()
        .into_iter()
        .map(|mut s| {
            s.init = s.truth.clone();
            s
        })
        .collect();
    let t = run_distance_ablation(&sc, 1).unwrap();
    for r in &t.rows {
        assert!(r.mean_iou > 0.99, "{} {}", r.functions.names(), r.mean_iou);
    }
}
