mod common;

use common::{definite_matrix, rng, uniform};
use proptest::prelude::*;
use smoothdyn::analysis::chaos::{
    coverage_increase_rate, coverage_series, divergence_series, kmeans_2,
};
use smoothdyn::analysis::synthesis::synthesize;
use smoothdyn::analysis::{
    check_stability, detect_limit_cycle, find_equilibria, EquilibriumConfig, LimitCycleConfig,
    StabilityConfig,
};
use smoothdyn::embed::NsvTrajectory;
use smoothdyn::field::{
    field_loss, filter_trajectories, horizon_weights, integrate, FieldModel, LinearField,
};
use smoothdyn::lift::Provenance;
use smoothdyn::systems::{simulate, HopfParams, State, System};

#[test]
fn stability_separates_contracting_and_expanding_linear_fields() {
    let mut cases = 0;
    for d in [2, 3, 4] {
        for k in 0..17 {
            let seed = 100 * d as u64 + k;
            let center = uniform(&mut rng(seed + 1), d, -0.5, 0.5);
            let ranges = vec![2.0; d];
            let cfg = StabilityConfig::new(0.05, seed);
            let hurwitz =
                LinearField::new(definite_matrix(d, seed, -1.0, 0.5), center.clone()).unwrap();
            assert!(
                check_stability(&hurwitz, &center, &ranges, &cfg)
                    .unwrap()
                    .stable,
                "d={d} seed {seed}"
            );
            let anti =
                LinearField::new(definite_matrix(d, seed, 1.0, 0.5), center.clone()).unwrap();
            assert!(
                !check_stability(&anti, &center, &ranges, &cfg)
                    .unwrap()
                    .stable,
                "d={d} seed {seed}"
            );
            cases += 1;
        }
    }
    assert!(cases >= 50);
}

#[test]
fn linear_equilibrium_is_found_at_its_center() {
    for seed in 0..5 {
        let c = vec![0.2, -0.3];
        let field = LinearField::new(definite_matrix(2, seed, -1.0, 0.5), c.clone()).unwrap();
        let pts: Vec<Vec<f64>> = {
            let mut r = rng(seed);
            (0..50).map(|_| uniform(&mut r, 2, -1.0, 1.0)).collect()
        };
        let search = find_equilibria(
            &field,
            &[pts.as_slice()],
            &[],
            &EquilibriumConfig::new(0.05, seed),
        )
        .unwrap();
        assert_eq!(search.equilibria.len(), 1, "{:?}", search.diagnostics);
        let e = &search.equilibria[0];
        assert!(
            e.v_eq.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-8),
            "{:?}",
            e.v_eq
        );
        assert!(e.stable);
    }
}

#[test]
fn linear_divergence_is_exponential() {
    let lambda = 0.3;
    let field =
        LinearField::new(vec![vec![lambda, 0.0], vec![0.0, lambda]], vec![0.0, 0.0]).unwrap();
    let a = integrate(&field, &[0.1, 0.2], 0.05, 41, 4).unwrap();
    let b = integrate(&field, &[0.1 + 1e-3, 0.2], 0.05, 41, 4).unwrap();
    let div = divergence_series(&a, &b).unwrap();
    for (k, v) in div.iter().enumerate() {
        let want = (lambda * 0.05 * k as f64).exp();
        assert!((v - want).abs() < 1e-8 * want, "step {k}: {v} vs {want}");
    }
}

#[test]
fn grid_walk_covers_every_box() {
    let n = 10;
    let mut walk = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let c = |k: usize| -1.0 + (2 * k + 1) as f64 / n as f64;
            walk.push(vec![c(i), c(j)]);
        }
    }
    let cov = coverage_series(&walk, n).unwrap();
    assert_eq!(*cov.last().unwrap(), 1.0);
    let rate = coverage_increase_rate(&cov).unwrap();
    assert!((rate - (1.0 - 0.01) / 99.0).abs() < 1e-15);
}

#[test]
fn fixed_point_has_no_coverage_growth() {
    let still = vec![vec![0.3, -0.3]; 50];
    assert_eq!(
        coverage_increase_rate(&coverage_series(&still, 10).unwrap()).unwrap(),
        0.0
    );
}

#[test]
fn kmeans_isolates_an_outlier() {
    let mut values: Vec<f64> = (0..30).map(|i| 0.01 * (i % 7) as f64).collect();
    values.push(10.0);
    let km = kmeans_2(&values).unwrap();
    let high: Vec<usize> = (0..values.len())
        .filter(|&i| km.is_high(values[i]))
        .collect();
    assert_eq!(high, vec![30]);
}

#[test]
fn synthesis_matches_closed_form_for_rotations() {
    // A rotation about `v_eq` keeps the distance, so damping alone sets it.
    let w = 3.0;
    let v_eq = vec![0.1, -0.2];
    let rot = LinearField::new(vec![vec![0.0, w], vec![-w, 0.0]], v_eq.clone()).unwrap();
    let starts = vec![vec![0.6, 0.1], vec![-0.4, -0.5], vec![0.1, 0.5]];
    let d0: f64 = starts
        .iter()
        .map(|s| ((s[0] - v_eq[0]).powi(2) + (s[1] - v_eq[1]).powi(2)).sqrt())
        .sum::<f64>()
        / 3.0;
    let dt = 0.02;
    let runs = synthesize(&rot, &v_eq, &[0.0, 1.0, 2.0, 4.0], &starts, dt, 101, 4).unwrap();
    for run in &runs {
        for (k, m) in run.mean_distance.iter().enumerate() {
            let want = d0 * (-run.gamma * dt * k as f64).exp();
            assert!(
                (m - want).abs() < 1e-7,
                "gamma {} step {k}: {m} vs {want}",
                run.gamma
            );
        }
    }
    assert!(runs
        .windows(2)
        .all(|p| p[1].terminal_distance < p[0].terminal_distance));
}

fn hopf_tail(mu: f64) -> Vec<Vec<f64>> {
    let sys = System::Hopf(HopfParams {
        mu,
        omega: 2.0 * std::f64::consts::PI,
        a: 1.0,
    });
    simulate(&sys, &State::new(vec![0.1, 0.0, 0.2]), 0.01, 3000, 2)
        .unwrap()
        .states
}

#[test]
fn hopf_cycle_period_and_decay() {
    let report = detect_limit_cycle(&hopf_tail(0.25), 0.01, &LimitCycleConfig::default()).unwrap();
    assert!(report.detected, "{report:?}");
    let p = report.period.unwrap();
    assert!((p - 1.0).abs() < 0.05, "period {p}");
    assert!((report.mean_radius - 0.5).abs() < 0.05);
    let report = detect_limit_cycle(&hopf_tail(-0.25), 0.01, &LimitCycleConfig::default()).unwrap();
    assert!(!report.detected, "{report:?}");
}

fn line(offset: f64, len: usize, step: f64) -> NsvTrajectory {
    NsvTrajectory {
        states: (0..len)
            .map(|i| vec![offset, -0.5 + step * i as f64])
            .collect(),
        dt: 0.1,
        provenance: Provenance {
            system: "line".into(),
            lift_seed: 0,
            trajectory_seed: None,
        },
    }
}

#[test]
fn filter_removes_exactly_the_jumping_trajectory() {
    // Dyadic steps so every regular step length is exactly equal.
    let step = 1.0 / 128.0;
    let mut trajs: Vec<NsvTrajectory> =
        (0..100).map(|i| line(i as f64 / 256.0, 20, step)).collect();
    let f = filter_trajectories(&trajs, 99.0).unwrap();
    assert!(f.removed.is_empty());
    trajs[37].states[10][1] += 9.0 * step;
    for s in trajs[37].states[11..].iter_mut() {
        s[1] += 9.0 * step;
    }
    let f = filter_trajectories(&trajs, 99.0).unwrap();
    assert_eq!(f.removed, vec![37]);
    assert_eq!(f.threshold, step);
    assert!(filter_trajectories(&trajs, 100.0)
        .unwrap()
        .removed
        .is_empty());
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn field_loss_matches_hand_expansion() {
    let model = FieldModel::init(2, 3).unwrap();
    let v = [vec![0.1, 0.2], vec![0.15, 0.1], vec![0.3, -0.05]];
    let (dt, sub) = (0.1, 2);
    let from0 = integrate(&model, &v[0], dt, 3, sub).unwrap();
    let from1 = integrate(&model, &v[1], dt, 2, sub).unwrap();
    let want =
        (dist(&from0[1], &v[1]) + 0.5 * dist(&from0[2], &v[2])) / 1.5 + dist(&from1[1], &v[2]);
    let (got, _) = field_loss(&model, &[&v[..]], 0.5, dt, sub).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    // Small ρ leaves only the one-step terms.
    let one_step = dist(&from0[1], &v[1]) + dist(&from1[1], &v[2]);
    let (tiny, _) = field_loss(&model, &[&v[..]], 1e-9, dt, sub).unwrap();
    assert!((tiny - one_step).abs() < 1e-8);

    // Averaged over trajectories.
    let (two, _) = field_loss(&model, &[&v[..], &v[..]], 0.5, dt, sub).unwrap();
    assert!((two - want).abs() < 1e-12);
}

#[test]
fn exact_model_has_zero_field_loss() {
    let model = FieldModel::init(2, 8).unwrap();
    let traj = integrate(&model, &[0.2, -0.1], 0.05, 6, 3).unwrap();
    let (loss, _) = field_loss(&model, &[&traj[..]], 0.5, 0.05, 3).unwrap();
    assert!(loss < 1e-12, "{loss}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn horizon_weights_sum_to_one(rho in 0.01f64..0.99, len in 1usize..80) {
        let w = horizon_weights(rho, len);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn coverage_is_monotone_and_bounded(seed in 0u64..1000, len in 1usize..200, bins in 1usize..12) {
        let mut r = rng(seed);
        let traj: Vec<Vec<f64>> = (0..len).map(|_| uniform(&mut r, 2, -1.2, 1.2)).collect();
        let c = coverage_series(&traj, bins).unwrap();
        prop_assert!(c.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(c.iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn kmeans_commutes_with_increasing_affine_maps(
        seed in 0u64..1000,
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let mut r = rng(seed);
        let mut values = uniform(&mut r, 20, 0.0, 0.3);
        values.extend(uniform(&mut r, 10, 0.7, 1.0));
        let a = kmeans_2(&values).unwrap();
        let mapped: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
        let b = kmeans_2(&mapped).unwrap();
        prop_assert!((b.threshold - (scale * a.threshold + shift)).abs() < 1e-9 * (1.0 + b.threshold.abs()));
        for (v, m) in values.iter().zip(&mapped) {
            prop_assert_eq!(a.is_high(*v), b.is_high(*m));
        }
    }
}
