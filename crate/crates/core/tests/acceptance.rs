//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Criterion failures are reported but only change the exit status when
//! `SMOOTHDYN_ACCEPTANCE_STRICT` is set; pipeline errors always abort.
//! `SMOOTHDYN_ACCEPTANCE_ONLY=1,4,11` restricts the run to some criteria.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use common::*;
use nalgebra::DMatrix;
use smoothdyn::analysis::{
    check_stability, EquilibriumReport, LimitCycleReport, LimitCycleStatus, StabilityConfig,
};
use smoothdyn::config::PipelineConfig;
use smoothdyn::dimension::DimensionEstimate;
use smoothdyn::embed::NsvTrajectory;
use smoothdyn::error::Result;
use smoothdyn::field::{full_horizon_error, single_step_error, LinearField, TrainingMode};
use smoothdyn::lift::Split;
use smoothdyn::pipeline::{self, ChaosOutcome, GroundTruthMatch, SmoothnessSummary, Variant};
use smoothdyn::systems::{
    linear_frequencies, DoublePendulumParams, HopfParams, PendulumParams, SpringMassParams, System,
};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Check {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

struct Ablation {
    recon_smooth: f64,
    recon_baseline: f64,
    step_filtered: f64,
    step_unfiltered: f64,
    horizon_integrated: f64,
    horizon_fd: f64,
}

/// Everything one seed of a mechanical system contributes.
struct MechRun {
    seed: u64,
    dim: DimensionEstimate,
    smooth: SmoothnessSummary,
    baseline: SmoothnessSummary,
    stable: Option<EquilibriumReport>,
    ground_truth: Option<GroundTruthMatch>,
    terminal: Vec<(f64, f64)>,
    ablation: Option<Ablation>,
    chaos: Option<ChaosOutcome>,
}

#[derive(Clone, Copy)]
struct Plan {
    field: bool,
    ablate: bool,
    chaos: bool,
}

fn elapsed(t: &Instant) -> String {
    format!("{:.0}s", t.elapsed().as_secs_f64())
}

fn run_mech(system: System, seed: u64, plan: Plan) -> Result<MechRun> {
    let t = Instant::now();
    let cfg = PipelineConfig::for_system(system, seed);
    let ds = pipeline::simulate_dataset(&cfg)?;
    let dim = pipeline::estimate_dimension(&cfg, &ds)?;
    let d = pipeline::embedding_dim(&cfg, Some(&dim))?;
    let (model, _) = pipeline::train_embed(&cfg, &ds, d, Variant::Smooth)?;
    let (base, _) = pipeline::train_embed(&cfg, &ds, d, Variant::Baseline)?;
    let enc = pipeline::encode(&model, &ds)?;
    let smooth = pipeline::smoothness_summary(&enc, Split::Test)?;
    let baseline = pipeline::smoothness_summary(&pipeline::encode(&base, &ds)?, Split::Test)?;
    eprintln!(
        "  {} seed {seed}: embeddings done ({})",
        system.name(),
        elapsed(&t)
    );
    let mut run = MechRun {
        seed,
        dim,
        smooth,
        baseline,
        stable: None,
        ground_truth: None,
        terminal: Vec::new(),
        ablation: None,
        chaos: None,
    };
    if !plan.field {
        return Ok(run);
    }

    let fcfg = cfg.field_config();
    let field = pipeline::train_field_stage(&enc, &fcfg, true)?;
    let search = pipeline::analyze_equilibria(&cfg, &field.model, &enc)?;
    run.stable = search.primary_stable().cloned();
    let reference = run.stable.clone().or_else(|| {
        search
            .equilibria
            .iter()
            .min_by(|a, b| a.residual.total_cmp(&b.residual))
            .cloned()
    });
    eprintln!(
        "  {} seed {seed}: field done ({})",
        system.name(),
        elapsed(&t)
    );
    if let Some(eq) = &reference {
        let obs = model.decode(&eq.v_eq)?;
        run.ground_truth = Some(pipeline::nearest_ground_truth(&cfg, &ds.lift, &obs)?);
        run.terminal = pipeline::analyze_synthesis(&cfg, &field.model, &eq.v_eq, &enc)?
            .iter()
            .map(|r| (r.gamma, r.terminal_distance))
            .collect();
        if plan.chaos {
            let set = pipeline::chaos_set(&cfg, &ds.lift)?;
            run.chaos = Some(pipeline::analyze_chaos(
                &cfg,
                &model,
                &set,
                &eq.v_eq,
                &pipeline::test_ranges(&enc),
            )?);
        }
    }

    if plan.ablate {
        // Both filter variants are scored on the same filtered validation set.
        let (_, val, _) = pipeline::filtered_splits(&enc, fcfg.filter_percentile, true)?;
        let val: Vec<&NsvTrajectory> = val.iter().collect();
        let unfiltered = pipeline::train_field_stage(&enc, &fcfg, false)?;
        let mut fd_cfg = fcfg.clone();
        fd_cfg.mode = TrainingMode::FiniteDifference;
        let fd = pipeline::train_field_stage(&enc, &fd_cfg, true)?;
        let val_series = || ds.val.iter().map(|s| &s.latent);
        run.ablation = Some(Ablation {
            recon_smooth: model.reconstruction_error(val_series())?,
            recon_baseline: base.reconstruction_error(val_series())?,
            step_filtered: single_step_error(&field.model, &val, fcfg.substeps)?,
            step_unfiltered: single_step_error(&unfiltered.model, &val, fcfg.substeps)?,
            horizon_integrated: full_horizon_error(&field.model, &val, fcfg.substeps)?,
            horizon_fd: full_horizon_error(&fd.model, &val, fcfg.substeps)?,
        });
        eprintln!(
            "  {} seed {seed}: ablations done ({})",
            system.name(),
            elapsed(&t)
        );
    }
    Ok(run)
}

fn run_hopf(mu: f64, seed: u64) -> Result<Vec<LimitCycleReport>> {
    let system = System::Hopf(HopfParams {
        mu,
        ..HopfParams::default()
    });
    let cfg = PipelineConfig::for_system(system, seed);
    let ds = pipeline::simulate_dataset(&cfg)?;
    let dim = pipeline::estimate_dimension(&cfg, &ds)?;
    let d = pipeline::embedding_dim(&cfg, Some(&dim))?;
    let (model, _) = pipeline::train_embed(&cfg, &ds, d, Variant::Smooth)?;
    let enc = pipeline::encode(&model, &ds)?;
    let field = pipeline::train_field_stage(&enc, &cfg.field_config(), true)?;
    pipeline::analyze_cycles(&cfg, &field.model, &enc)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn first_frequency(r: &MechRun) -> Option<f64> {
    r.stable
        .as_ref()
        .and_then(|e| e.frequencies.first().copied())
}

fn frequency_check(
    id: usize,
    name: &'static str,
    runs: &[MechRun],
    system: &System,
    tol: f64,
) -> Check {
    let target = linear_frequencies(system).expect("valid system")[0];
    let freqs: Vec<Option<f64>> = runs.iter().map(first_frequency).collect();
    let found: Vec<f64> = freqs.iter().flatten().copied().collect();
    let all = found.len() == runs.len();
    let m = if found.is_empty() {
        f64::NAN
    } else {
        mean(&found)
    };
    let pass = all && ((m - target) / target).abs() <= tol;
    Check {
        id,
        name,
        pass,
        detail: format!(
            "per seed {freqs:.3?}, mean {m:.3} vs {target:.3} (tolerance {:.0}%)",
            100.0 * tol
        ),
    }
}

/// `P J P⁻¹` with `J` block diagonal and every eigenvalue real part in `[0.5, 2]`.
fn anti_hurwitz_similar(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut j = DMatrix::<f64>::zeros(d, d);
    let mut i = 0;
    while i < d {
        let a = uniform(&mut r, 1, 0.5, 2.0)[0];
        if i + 1 < d {
            let b = uniform(&mut r, 1, 0.5, 6.0)[0];
            j[(i, i)] = a;
            j[(i + 1, i + 1)] = a;
            j[(i, i + 1)] = b;
            j[(i + 1, i)] = -b;
            i += 2;
        } else {
            j[(i, i)] = a;
            i += 1;
        }
    }
    let p = DMatrix::<f64>::identity(d, d)
        + DMatrix::from_fn(d, d, |_, _| uniform(&mut r, 1, -0.4, 0.4)[0]);
    let a = &p * j * p.try_inverse().expect("perturbed identity is invertible");
    (0..d)
        .map(|i| (0..d).map(|k| a[(i, k)]).collect())
        .collect()
}

fn synthetic_stability() -> (usize, usize) {
    let dt = 1.0 / 60.0;
    let mut correct = 0;
    let mut total = 0;
    for k in 0..50u64 {
        let d = 2 + (k % 3) as usize;
        let seed = 9000 + k;
        let a = if k < 25 {
            definite_matrix(d, seed, 1.0, 0.5)
        } else {
            anti_hurwitz_similar(d, seed)
        };
        let center = uniform(&mut rng(seed + 1), d, -0.5, 0.5);
        let field = LinearField::new(a, center.clone()).expect("square matrix");
        let res = check_stability(
            &field,
            &center,
            &vec![2.0; d],
            &StabilityConfig::new(dt, seed),
        )
        .expect("valid stability config");
        total += 1;
        correct += usize::from(!res.stable);
    }
    (correct, total)
}

fn numerics_suite() -> Check {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut worst = |label: &str, v: f64, ok: bool| {
        if !ok {
            failures.push(format!("{label} {v:.3e}"));
        }
    };
    let mut grad = 0.0f64;
    for (_, specs, omega0) in architectures() {
        for seed in 0..5 {
            grad = grad.max(mlp_param_gradient_error(&specs, omega0, seed));
            grad = grad.max(mlp_input_gradient_error(&specs, omega0, seed));
        }
    }
    for seed in 0..3 {
        grad = grad.max(field_loss_gradient_error(seed));
        grad = grad.max(embed_loss_gradient_error(seed));
    }
    worst("gradient", grad, grad < 1e-5);
    let ratios: Vec<f64> = [2, 4].iter().map(|&n| rk4_richardson_ratio(n)).collect();
    for &r in &ratios {
        worst("rk4 ratio", r, (12.0..=20.0).contains(&r));
    }
    let selfdiv = (0..5).map(sinkhorn_self_divergence).fold(0.0, f64::max);
    worst("sinkhorn self", selfdiv, selfdiv < 1e-8);
    let brute = (0..10).map(sinkhorn_brute_force_error).fold(0.0, f64::max);
    worst("sinkhorn brute force", brute, brute < 1e-2);
    let eig = (0..20).map(eigen_similarity_error).fold(0.0, f64::max);
    worst("eigen similarity", eig, eig < 1e-8);
    for omega in [1.0, 3.0] {
        let (e1, e2) = smoothness_taylor_errors(omega, 0.01);
        worst("taylor", e1, e1 < 1e-3 && (3.0..=5.0).contains(&(e1 / e2)));
    }
    let tv = smoothness_total_variation(2.0, 3, 400);
    worst("total variation", tv, (tv - 12.0).abs() < 1e-3);
    let secs = t.elapsed().as_secs_f64();
    worst("runtime s", secs, secs < 60.0);
    Check {
        id: 11,
        name: "numerics suite",
        pass: failures.is_empty(),
        detail: format!(
            "gradient {grad:.2e}, rk4 {ratios:.2?}, self-divergence {selfdiv:.2e}, brute force {brute:.2e}, \
             eigen {eig:.2e}, {secs:.1}s{}",
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    }
}

fn selected() -> BTreeSet<usize> {
    match std::env::var("SMOOTHDYN_ACCEPTANCE_ONLY") {
        Ok(s) if !s.trim().is_empty() => s
            .split(',')
            .map(|x| x.trim().parse().expect("criterion ids are integers"))
            .collect(),
        _ => (1..=11).collect(),
    }
}

fn main() -> Result<()> {
    let only = selected();
    let want = |ids: &[usize]| ids.iter().any(|i| only.contains(i));
    let start = Instant::now();
    let mut checks = Vec::new();

    if want(&[11]) {
        checks.push(numerics_suite());
    }

    let spring = System::SpringMass(SpringMassParams::default());
    let pendulum = System::SinglePendulum(PendulumParams::default());
    let double = System::DoublePendulum(DoublePendulumParams::default());
    let fields = want(&[1, 2, 3, 4, 9, 10]);
    let mut mech: Vec<(System, Vec<MechRun>)> = Vec::new();
    if want(&[1, 2, 3, 4, 5, 6, 7, 9, 10]) {
        for system in [spring, pendulum, double] {
            let is_dp = matches!(system, System::DoublePendulum(_));
            let mut runs = Vec::new();
            for seed in SEEDS {
                // The double pendulum trains one field, on seed 0.
                let plan = Plan {
                    field: (fields || want(&[7])) && (!is_dp || seed == 0),
                    ablate: want(&[9]) && matches!(system, System::SpringMass(_)),
                    chaos: want(&[7]) && is_dp,
                };
                runs.push(run_mech(system, seed, plan)?);
            }
            mech.push((system, runs));
        }
    }
    let runs_of = |s: &System| &mech.iter().find(|(x, _)| x == s).expect("system ran").1;

    if want(&[1]) {
        checks.push(frequency_check(
            1,
            "spring mass frequency",
            runs_of(&spring),
            &spring,
            0.25,
        ));
    }
    if want(&[2]) {
        checks.push(frequency_check(
            2,
            "pendulum frequency",
            runs_of(&pendulum),
            &pendulum,
            0.20,
        ));
    }
    if want(&[3]) {
        let mut pass = true;
        let mut parts = Vec::new();
        for s in [spring, pendulum] {
            for r in runs_of(&s) {
                let off = r.ground_truth.as_ref().map(|g| g.relative_offset.clone());
                pass &= off.as_ref().is_some_and(|o| o.iter().all(|v| *v < 0.05));
                parts.push(format!("{} seed {}: {off:.4?}", s.name(), r.seed));
            }
        }
        checks.push(Check {
            id: 3,
            name: "equilibrium location",
            pass,
            detail: parts.join("; "),
        });
    }
    if want(&[4]) {
        let mut mech_ok = 0;
        let mut mech_total = 0;
        let mut parts = Vec::new();
        for (s, runs) in &mech {
            for r in runs.iter().filter(|r| r.ground_truth.is_some()) {
                mech_total += 1;
                mech_ok += usize::from(r.stable.is_some());
                parts.push(format!(
                    "{} seed {}: {}",
                    s.name(),
                    r.seed,
                    r.stable.is_some()
                ));
            }
        }
        let (syn_ok, syn_total) = synthetic_stability();
        checks.push(Check {
            id: 4,
            name: "stability certification",
            pass: mech_ok == mech_total && mech_total > 0 && syn_ok == syn_total,
            detail: format!(
                "mechanical {mech_ok}/{mech_total} stable ({}); synthetic anti-Hurwitz {syn_ok}/{syn_total} unstable",
                parts.join(", ")
            ),
        });
    }
    if want(&[5]) {
        let mut pass = true;
        let mut parts = Vec::new();
        for (s, want_d) in [(spring, 2), (pendulum, 2), (double, 4)] {
            let raw: Vec<f64> = runs_of(&s).iter().map(|r| r.dim.raw).collect();
            pass &= runs_of(&s).iter().all(|r| r.dim.rounded == want_d);
            parts.push(format!("{} {raw:.2?} (want {want_d})", s.name()));
        }
        checks.push(Check {
            id: 5,
            name: "intrinsic dimension",
            pass,
            detail: parts.join("; "),
        });
    }
    if want(&[6]) {
        let mut pass = true;
        let mut parts = Vec::new();
        for (s, runs) in &mech {
            for r in runs {
                let ok = r.smooth.median_sm11 < r.baseline.median_sm11
                    && r.smooth.median_sm21 < r.baseline.median_sm21;
                pass &= ok;
                parts.push(format!(
                    "{} seed {}: sm11 {:.3} vs {:.3}, sm21 {:.3} vs {:.3}",
                    s.name(),
                    r.seed,
                    r.smooth.median_sm11,
                    r.baseline.median_sm11,
                    r.smooth.median_sm21,
                    r.baseline.median_sm21
                ));
            }
        }
        checks.push(Check {
            id: 6,
            name: "smoothness ordering",
            pass,
            detail: parts.join("; "),
        });
    }
    if want(&[7]) {
        let outcome = runs_of(&double)[0].chaos.as_ref();
        let (pass, detail) = match outcome {
            None => (
                false,
                "no equilibrium to measure distances from".to_string(),
            ),
            Some(o) => {
                let rep = &o.report;
                let fd = rep.final_divergence;
                let dist = rep.mean_distance_to_equilibrium;
                let gt = |v: [Option<f64>; 2]| matches!(v, [Some(r), Some(c)] if c > r);
                let frac = o.high_energy_chaotic_fraction;
                let pass = gt(fd) && gt(dist) && frac.is_some_and(|f| f >= 0.8);
                (
                    pass,
                    format!(
                        "{} sequences; final divergence [regular, chaotic] {fd:.4?}; \
                         distance to equilibrium {dist:.2?}; high-energy chaotic fraction {frac:.2?}",
                        rep.classes.len()
                    ),
                )
            }
        };
        checks.push(Check {
            id: 7,
            name: "chaos separation",
            pass,
            detail,
        });
    }
    if want(&[8]) {
        let target = 2.0 * std::f64::consts::PI / HopfParams::default().omega;
        let mut pass = true;
        let mut parts = Vec::new();
        for seed in SEEDS {
            let t = Instant::now();
            let neg = run_hopf(-0.25, seed)?;
            let pos = run_hopf(0.25, seed)?;
            eprintln!("  hopf seed {seed}: done ({})", elapsed(&t));
            let neg_ok = neg.iter().all(|c| c.status != LimitCycleStatus::Detected);
            let periods: Vec<f64> = pos
                .iter()
                .filter(|c| c.status == LimitCycleStatus::Detected)
                .filter_map(|c| c.period)
                .collect();
            let pos_ok = 2 * periods.len() >= pos.len()
                && periods.iter().all(|p| ((p - target) / target).abs() <= 0.1);
            pass &= neg_ok && pos_ok;
            parts.push(format!(
                "seed {seed}: mu<0 detections {}/{}, mu>0 periods {periods:.3?} of {} starts",
                neg.iter().filter(|c| c.detected).count(),
                neg.len(),
                pos.len()
            ));
        }
        checks.push(Check {
            id: 8,
            name: "limit cycle",
            pass,
            detail: format!("target period {target:.3}; {}", parts.join("; ")),
        });
    }
    if want(&[9]) {
        let mut pass = true;
        let mut parts = Vec::new();
        for r in runs_of(&spring) {
            let Some(a) = &r.ablation else {
                pass = false;
                continue;
            };
            pass &= a.recon_smooth <= 1.25 * a.recon_baseline
                && a.step_filtered <= a.step_unfiltered
                && a.horizon_integrated <= a.horizon_fd;
            parts.push(format!(
                "seed {}: recon {:.3e} vs {:.3e}, step {:.4e} vs {:.4e}, horizon {:.3e} vs {:.3e}",
                r.seed,
                a.recon_smooth,
                a.recon_baseline,
                a.step_filtered,
                a.step_unfiltered,
                a.horizon_integrated,
                a.horizon_fd
            ));
        }
        checks.push(Check {
            id: 9,
            name: "training ablations (spring mass)",
            pass,
            detail: parts.join("; "),
        });
    }
    if want(&[10]) {
        let mut pass = true;
        let mut parts = Vec::new();
        for (s, runs) in &mech {
            for r in runs.iter().filter(|r| r.ground_truth.is_some()) {
                let d: Vec<f64> = [1.0, 2.0, 4.0]
                    .iter()
                    .filter_map(|g| r.terminal.iter().find(|(x, _)| x == g).map(|p| p.1))
                    .collect();
                pass &= d.len() == 3 && d.windows(2).all(|w| w[1] <= w[0]);
                let shown: Vec<String> = d.iter().map(|v| format!("{v:.2e}")).collect();
                parts.push(format!(
                    "{} seed {}: [{}]",
                    s.name(),
                    r.seed,
                    shown.join(", ")
                ));
            }
            pass &= runs.iter().any(|r| r.ground_truth.is_some());
        }
        checks.push(Check {
            id: 10,
            name: "damped synthesis",
            pass,
            detail: parts.join("; "),
        });
    }

    checks.sort_by_key(|c| c.id);
    for c in &checks {
        println!(
            "{} criterion {:>2} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!(
        "acceptance: {}/{} passed in {}",
        checks.len() - failed,
        checks.len(),
        elapsed(&start)
    );
    if failed > 0 && std::env::var_os("SMOOTHDYN_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
    Ok(())
}
