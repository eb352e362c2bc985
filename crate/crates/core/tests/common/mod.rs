//! Numerical checks shared by the property tests and the acceptance run.
//! Each returns the measured quantity so callers can apply their tolerance.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smoothdyn::analysis::{eigenvalues_small, smoothness_metric, SmoothnessOrder};
use smoothdyn::embed::{
    decoder_widths, encoder_widths, total_loss, EmbedConfig, EmbeddingModel, Standardization,
    TripletBatch,
};
use smoothdyn::field::{field_loss, integrate, FieldModel, LinearField};
use smoothdyn::nn::{chain, Activation, Gradients, InitConfig, LayerSpec, Mlp};
use smoothdyn::systems::{simulate, SpringMassParams, State, System};
use smoothdyn::transport::{sinkhorn_divergence, SinkhornConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / ‖a‖`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(1e-300)
}

/// Every architecture the crate trains.
pub fn architectures() -> Vec<(String, Vec<LayerSpec>, f64)> {
    let mut out = Vec::new();
    for d in [2, 3, 4] {
        out.push((
            format!("encoder d={d}"),
            chain(&encoder_widths(64, d), Activation::Sine, Activation::Sine),
            5.0,
        ));
        out.push((
            format!("decoder d={d}"),
            chain(
                &decoder_widths(d, 64),
                Activation::Sine,
                Activation::Identity,
            ),
            5.0,
        ));
        out.push((
            format!("field d={d}"),
            FieldModel::init(d, 0).unwrap().mlp.specs().to_vec(),
            30.0,
        ));
    }
    out
}

/// Up to `count` distinct parameter indices drawn deterministically from `seed`.
/// Central differences over every weight of the wide networks are too slow to
/// run per seed, so gradient checks compare on this subset.
pub fn probe_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    rand::seq::index::sample(&mut rng(seed ^ 0x1d5), n, count).into_vec()
}

/// `(analytic[idx], fd)` compared by relative error.
fn subset_error(analytic: &[f64], idx: &[usize], fd: &[f64]) -> f64 {
    let a: Vec<f64> = idx.iter().map(|&i| analytic[i]).collect();
    rel_error(&a, fd)
}

fn half_sq_loss(m: &Mlp, x: &[f64], rows: usize) -> f64 {
    0.5 * m
        .predict_batch(x, rows)
        .unwrap()
        .iter()
        .map(|y| y * y)
        .sum::<f64>()
}

/// Parameter gradient of `½‖f(x)‖²` on a 3-row batch against central
/// differences with step 1e-5 on 60 probed parameters. Returns the relative
/// error.
pub fn mlp_param_gradient_error(specs: &[LayerSpec], omega0: f64, seed: u64) -> f64 {
    let mut m = Mlp::new(specs, seed, &InitConfig { omega0 }).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let rows = 3;
    let x = uniform(&mut r, rows * m.input_dim(), -1.0, 1.0);
    let cache = m.forward_batch(&x, rows).unwrap();
    let dy = cache.output().to_vec();
    let (g, _) = m.backward(&cache, &dy).unwrap();
    let h = 1e-5;
    let idx = probe_indices(m.num_params(), 60, seed);
    let fd: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let p0 = m.flat_params()[i];
            m.params_mut()[i] = p0 + h;
            let up = half_sq_loss(&m, &x, rows);
            m.params_mut()[i] = p0 - h;
            let dn = half_sq_loss(&m, &x, rows);
            m.params_mut()[i] = p0;
            (up - dn) / (2.0 * h)
        })
        .collect();
    subset_error(g.as_slice(), &idx, &fd)
}

/// Input gradient of a random linear functional of the output.
pub fn mlp_input_gradient_error(specs: &[LayerSpec], omega0: f64, seed: u64) -> f64 {
    let m = Mlp::new(specs, seed, &InitConfig { omega0 }).unwrap();
    let mut r = rng(seed ^ 0x1a9e7);
    let x = uniform(&mut r, m.input_dim(), -1.0, 1.0);
    let c = uniform(&mut r, m.output_dim(), -1.0, 1.0);
    let f = |x: &[f64]| -> f64 {
        m.predict(x)
            .unwrap()
            .iter()
            .zip(&c)
            .map(|(a, b)| a * b)
            .sum()
    };
    let (_, cache) = m.forward(&x).unwrap();
    let (_, dx) = m.backward(&cache, &c).unwrap();
    let h = 1e-5;
    let fd: Vec<f64> = (0..x.len())
        .map(|i| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect();
    rel_error(&dx, &fd)
}

/// `field_loss` gradient on one trajectory of four samples (three steps)
/// against central differences on 60 probed parameters.
pub fn field_loss_gradient_error(seed: u64) -> f64 {
    let mut model = FieldModel::init(2, seed).unwrap();
    let mut r = rng(seed ^ 0xf1e1d);
    let traj: Vec<Vec<f64>> = (0..4).map(|_| uniform(&mut r, 2, -0.8, 0.8)).collect();
    let trajs = [traj.as_slice()];
    let (dt, rho, sub) = (0.05, 0.5, 2);
    let (_, g) = field_loss(&model, &trajs, rho, dt, sub).unwrap();
    let h = 1e-6;
    let idx = probe_indices(model.mlp.num_params(), 60, seed);
    let fd: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let p0 = model.mlp.flat_params()[i];
            model.mlp.params_mut()[i] = p0 + h;
            let up = field_loss(&model, &trajs, rho, dt, sub).unwrap().0;
            model.mlp.params_mut()[i] = p0 - h;
            let dn = field_loss(&model, &trajs, rho, dt, sub).unwrap().0;
            model.mlp.params_mut()[i] = p0;
            (up - dn) / (2.0 * h)
        })
        .collect();
    subset_error(g.as_slice(), &idx, &fd)
}

fn small_embedding(seed: u64) -> (EmbeddingModel, TripletBatch, EmbedConfig, Vec<f64>) {
    let mut r = rng(seed ^ 0xe4bed);
    let width = 8;
    let d = 2;
    let mut cfg = EmbedConfig::new(d, seed);
    cfg.encoder_omega0 = 5.0;
    cfg.decoder_omega0 = 5.0;
    cfg.sinkhorn.blur = 0.1;
    cfg.sinkhorn.tolerance = 1e-13;
    cfg.sinkhorn.max_iterations = 20_000;
    let rows: Vec<Vec<f64>> = (0..9).map(|_| uniform(&mut r, width, -1.0, 1.0)).collect();
    let st = Standardization::fit(rows.iter().map(|v| v.as_slice())).unwrap();
    let model = EmbeddingModel::init(width, &cfg, st).unwrap();
    let triplets: Vec<[&[f64]; 3]> = (0..3)
        .map(|k| [&rows[3 * k][..], &rows[3 * k + 1][..], &rows[3 * k + 2][..]])
        .collect();
    let batch = TripletBatch::from_triplets(&model, &triplets).unwrap();
    let reference = uniform(&mut r, 3 * d, -1.0, 1.0);
    (model, batch, cfg, reference)
}

/// Composite embedding loss on a 3-triplet batch: relative error of the
/// encoder and decoder gradients against central differences on 40 probed
/// parameters of each network.
pub fn embed_loss_gradient_error(seed: u64) -> f64 {
    let (mut model, batch, cfg, reference) = small_embedding(seed);
    let l0 = 1e-3;
    let loss = |m: &EmbeddingModel| total_loss(&batch, m, 1.0, &cfg, l0, &reference).unwrap();
    let base = loss(&model);
    let h = 1e-6;
    let mut analytic = base.encoder_grads.as_slice().to_vec();
    analytic.extend_from_slice(base.decoder_grads.as_slice());
    let mut fd = Vec::new();
    let mut picked = Vec::new();
    let offset = model.encoder.num_params();
    for net in 0..2 {
        let n = if net == 0 {
            model.encoder.num_params()
        } else {
            model.decoder.num_params()
        };
        for i in probe_indices(n, 40, seed + net as u64) {
            picked.push(if net == 0 { i } else { offset + i });
            fn p(m: &mut EmbeddingModel, net: usize) -> &mut [f64] {
                if net == 0 {
                    m.encoder.params_mut()
                } else {
                    m.decoder.params_mut()
                }
            }
            let p0 = p(&mut model, net)[i];
            p(&mut model, net)[i] = p0 + h;
            let up = loss(&model).total;
            p(&mut model, net)[i] = p0 - h;
            let dn = loss(&model).total;
            p(&mut model, net)[i] = p0;
            fd.push((up - dn) / (2.0 * h));
        }
    }
    subset_error(&analytic, &picked, &fd)
}

/// Endpoint errors of spring-mass RK4 over 1 s at `dt = 0.1` with `n` and
/// `2n` substeps against a 64-substep reference; returns their ratio.
pub fn rk4_richardson_ratio(n: usize) -> f64 {
    let sys = System::SpringMass(SpringMassParams::default());
    let x0 = State::new(vec![0.7, -1.3]);
    let end = |sub: usize| simulate(&sys, &x0, 0.1, 11, sub).unwrap().states[10].clone();
    let reference = end(64);
    let err = |sub: usize| {
        let e = end(sub);
        norm(&[e[0] - reference[0], e[1] - reference[1]])
    };
    err(n) / err(2 * n)
}

/// `exp(A)` by scaling and squaring of a degree-20 Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let s = (a.norm().log2().ceil().max(0.0) as i32) + 4;
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Maximum error of an integrated linear field over unit time (ten samples
/// of 0.1 s, ten substeps each) against `exp(At) v0`.
pub fn linear_field_expm_error(seed: u64) -> f64 {
    let mut r = rng(seed ^ 0xe7);
    let a: Vec<Vec<f64>> = (0..2).map(|_| uniform(&mut r, 2, -1.0, 1.0)).collect();
    let v0 = uniform(&mut r, 2, -1.0, 1.0);
    let field = LinearField::new(a.clone(), vec![0.0, 0.0]).unwrap();
    let traj = integrate(&field, &v0, 0.1, 11, 10).unwrap();
    let am = DMatrix::from_fn(2, 2, |i, j| a[i][j]);
    let mut worst = 0.0f64;
    for (k, s) in traj.iter().enumerate() {
        let e = expm(&(&am * (0.1 * k as f64))) * nalgebra::DVector::from_column_slice(&v0);
        worst = worst.max(norm(&[s[0] - e[0], s[1] - e[1]]));
    }
    worst
}

pub fn sinkhorn_cfg(blur: f64) -> SinkhornConfig {
    SinkhornConfig {
        blur,
        max_iterations: 100_000,
        tolerance: 1e-12,
        debiased: true,
    }
}

/// Divergence of a random 10-point cloud with itself.
pub fn sinkhorn_self_divergence(seed: u64) -> f64 {
    let mut r = rng(seed ^ 0x51);
    let a = uniform(&mut r, 20, -1.0, 1.0);
    sinkhorn_divergence(&a, &a, 2, &sinkhorn_cfg(0.05))
        .unwrap()
        .value
        .abs()
}

/// Exact transport cost between two uniform 3-point sets: the cheapest of the
/// six permutation couplings of the squared Euclidean cost.
pub fn brute_force_ot(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let cost = |i: usize, j: usize| -> f64 {
        (0..dim)
            .map(|k| (a[i * dim + k] - b[j * dim + k]).powi(2))
            .sum()
    };
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    perms
        .iter()
        .map(|p| (0..3).map(|i| cost(i, p[i])).sum::<f64>() / 3.0)
        .fold(f64::INFINITY, f64::min)
}

/// Relative gap between the debiased divergence at blur 1e-3 and the exact
/// transport cost on random 3-point sets.
pub fn sinkhorn_brute_force_error(seed: u64) -> f64 {
    let mut r = rng(seed ^ 0xb7);
    let a = uniform(&mut r, 6, -1.0, 1.0);
    let b = uniform(&mut r, 6, -1.0, 1.0);
    let exact = brute_force_ot(&a, &b, 2);
    let got = sinkhorn_divergence(&a, &b, 2, &sinkhorn_cfg(1e-3))
        .unwrap()
        .value;
    (got - exact).abs() / exact
}

/// Largest distance from each eigenvalue of `J` to the nearest eigenvalue of
/// `P⁻¹JP` for a random 4×4 `J` and well-conditioned `P`.
pub fn eigen_similarity_error(seed: u64) -> f64 {
    let mut r = rng(seed ^ 0xe16);
    let j = DMatrix::from_iterator(4, 4, uniform(&mut r, 16, -2.0, 2.0));
    let p = DMatrix::<f64>::identity(4, 4)
        + DMatrix::from_iterator(4, 4, uniform(&mut r, 16, -0.3, 0.3));
    let pj = p.clone().try_inverse().unwrap() * &j * &p;
    let rows = |m: &DMatrix<f64>| {
        (0..4)
            .map(|i| (0..4).map(|k| m[(i, k)]).collect())
            .collect::<Vec<Vec<f64>>>()
    };
    let e1 = eigenvalues_small(&rows(&j)).unwrap();
    let e2 = eigenvalues_small(&rows(&pj)).unwrap();
    let scale = e1.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
    e1.iter()
        .map(|z| {
            e2.iter()
                .map(|w| (z - w).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        / scale
}

/// Eigenvalues of `J` computed by nalgebra's Schur decomposition.
pub fn reference_eigenvalues(j: &[Vec<f64>]) -> Vec<Complex64> {
    let n = j.len();
    let m = DMatrix::from_fn(n, n, |r, c| j[r][c]);
    m.complex_eigenvalues().iter().copied().collect()
}

fn sampled_sine(omega: f64, dt: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| vec![(omega * i as f64 * dt).sin()])
        .collect()
}

/// Relative errors of `SM_{2,∞}` for `sin(ωt)` against `ω²` at step `dt` and
/// `dt/2`; the second should be about a quarter of the first.
pub fn smoothness_taylor_errors(omega: f64, dt: f64) -> (f64, f64) {
    let err = |h: f64| {
        let n = (2.0 * std::f64::consts::PI / omega / h).ceil() as usize + 3;
        let m = smoothness_metric(&sampled_sine(omega, h, n), h, 2, SmoothnessOrder::Max, None)
            .unwrap();
        (m - omega * omega).abs() / (omega * omega)
    };
    (err(dt), err(dt / 2.0))
}

/// `SM_{1,1}` of `sin(ωt)` over whole periods, whose exact value is 4 per
/// period.
pub fn smoothness_total_variation(omega: f64, periods: usize, per_period: usize) -> f64 {
    let dt = 2.0 * std::f64::consts::PI / omega / per_period as f64;
    let traj = sampled_sine(omega, dt, periods * per_period + 1);
    smoothness_metric(&traj, dt, 1, SmoothnessOrder::L1, None).unwrap()
}

pub fn grads_of(g: &Gradients) -> &[f64] {
    g.as_slice()
}

/// A spring-mass configuration small enough to run every command in seconds.
pub fn tiny_config(out: &std::path::Path) -> smoothdyn::config::PipelineConfig {
    use smoothdyn::lift::SplitSizes;
    let mut cfg = smoothdyn::config::PipelineConfig::for_system(
        System::SpringMass(SpringMassParams::default()),
        3,
    );
    cfg.output_dir = out.to_path_buf();
    cfg.dataset.splits = SplitSizes {
        train: 8,
        val: 2,
        test: 3,
    };
    cfg.dataset.seq_len = 30;
    cfg.embed.steps = 20;
    cfg.embed.batch_size = 8;
    cfg.embed.eval_every = 10;
    cfg.embed.beta.cycle = 10;
    cfg.field.steps = 60;
    cfg.field.batch_size = 4;
    cfg.field.eval_every = 5;
    cfg.field.rho_cycle = 10;
    let a = &mut cfg.analysis;
    a.equilibrium.candidates = 10;
    a.equilibrium.stability.horizon = 20;
    a.equilibrium.stability.n_directions = 3;
    a.equilibrium.stability.n_radii = 3;
    a.cycle_horizon = 40;
    a.cycle_starts = 1;
    a.chaos_set.n_base = 4;
    a.chaos_set.horizon = 30;
    a.synthesis.horizon = 20;
    a.synthesis.n_starts = 2;
    cfg
}

/// `S ± (GGᵀ/d + μI)` with `S` skew: the symmetric part is definite, so the
/// flow contracts (or expands) Euclidean distances at rate at least `μ`.
pub fn definite_matrix(d: usize, seed: u64, sign: f64, mu: f64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let g: Vec<Vec<f64>> = (0..d).map(|_| uniform(&mut r, d, -1.0, 1.0)).collect();
    let s: Vec<Vec<f64>> = (0..d).map(|_| uniform(&mut r, d, -2.0, 2.0)).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let skew = s[i][j] - s[j][i];
                    let gg: f64 = (0..d).map(|k| g[i][k] * g[j][k]).sum::<f64>() / d as f64;
                    skew + sign * (gg + if i == j { mu } else { 0.0 })
                })
                .collect()
        })
        .collect()
}
