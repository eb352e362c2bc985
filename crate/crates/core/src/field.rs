//! The neural state vector field `dV/dt = F̂(V)`: evaluation, fixed-step RK4
//! integration, trajectory filtering and training.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::spectrum::Matrix;
use crate::embed::NsvTrajectory;
use crate::error::{check_len, Error, Result};
use crate::nn::{
    chain, Activation, AdamConfig, AdamState, ForwardCache, Gradients, InitConfig, Mlp,
};
use crate::ode::{self, validate_grid, Rk4Workspace};
use crate::rng::{derive_seed, rng_for};
use crate::systems::System;

/// Anything that can be integrated: learned fields, ground-truth systems,
/// closures and the damped fields built by the analysis module.
pub trait VectorField {
    fn dim(&self) -> usize;

    fn eval_into(&self, v: &[f64], out: &mut [f64]) -> Result<()>;

    /// Evaluate `vs.len() / dim` row-major states at once.
    fn eval_batch(&self, vs: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        check_len("batch output", vs.len(), out.len())?;
        for (v, o) in vs.chunks(d).zip(out.chunks_mut(d)) {
            self.eval_into(v, o)?;
        }
        Ok(())
    }

    /// Exact Jacobian when the field knows it.
    fn analytic_jacobian(&self, _v: &[f64]) -> Option<Result<Matrix>> {
        None
    }

    fn eval(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("field input", self.dim(), v.len())?;
        let mut out = vec![0.0; v.len()];
        self.eval_into(v, &mut out)?;
        Ok(out)
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval_into(v, out)
    }
    fn eval_batch(&self, vs: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval_batch(vs, out)
    }
    fn analytic_jacobian(&self, v: &[f64]) -> Option<Result<Matrix>> {
        (**self).analytic_jacobian(v)
    }
}

impl VectorField for System {
    fn dim(&self) -> usize {
        self.state_dim()
    }
    fn eval_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.deriv(v, out)
    }
}

/// A closure as a field.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("field input", self.dim, v.len())?;
        (self.f)(v, out);
        Ok(())
    }
}

/// `F(V) = A (V − c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub a: Matrix,
    pub center: Vec<f64>,
}

impl LinearField {
    pub fn new(a: Matrix, center: Vec<f64>) -> Result<Self> {
        for row in &a {
            check_len("linear field row", center.len(), row.len())?;
        }
        check_len("linear field rows", center.len(), a.len())?;
        Ok(Self { a, center })
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn eval_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("field input", self.dim(), v.len())?;
        for (o, row) in out.iter_mut().zip(&self.a) {
            *o = row
                .iter()
                .zip(v.iter().zip(&self.center))
                .map(|(a, (x, c))| a * (x - c))
                .sum();
        }
        Ok(())
    }
    fn analytic_jacobian(&self, _v: &[f64]) -> Option<Result<Matrix>> {
        Some(Ok(self.a.clone()))
    }
}

/// Architecture widths: six layers up to `d = 2`, eight beyond.
pub fn field_widths(d: usize) -> Vec<usize> {
    if d <= 2 {
        vec![d, 32, 64, 128, 64, 32, d]
    } else {
        vec![d, 32, 64, 128, 256, 128, 64, 32, d]
    }
}

/// Learned field: a ReLU MLP with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub mlp: Mlp,
    pub d: usize,
    pub config_fingerprint: String,
}

impl FieldModel {
    pub fn init(d: usize, seed: u64) -> Result<Self> {
        let specs = chain(&field_widths(d), Activation::Relu, Activation::Identity);
        Ok(Self {
            mlp: Mlp::new(&specs, derive_seed(seed, "field"), &InitConfig::default())?,
            d,
            config_fingerprint: String::new(),
        })
    }

    pub fn zeros(d: usize) -> Result<Self> {
        let specs = chain(&field_widths(d), Activation::Relu, Activation::Identity);
        Ok(Self {
            mlp: Mlp::zeros(&specs)?,
            d,
            config_fingerprint: String::new(),
        })
    }
}

impl VectorField for FieldModel {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("field input", self.d, v.len())?;
        out.copy_from_slice(&self.mlp.predict(v)?);
        Ok(())
    }
    fn eval_batch(&self, vs: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("batch output", vs.len(), out.len())?;
        out.copy_from_slice(&self.mlp.predict_batch(vs, vs.len() / self.d)?);
        Ok(())
    }
    fn analytic_jacobian(&self, v: &[f64]) -> Option<Result<Matrix>> {
        Some(self.mlp.jacobian(v))
    }
}

pub fn eval_field(model: &FieldModel, v: &[f64]) -> Result<Vec<f64>> {
    model.eval(v)
}

/// Integrate one start; `n_samples` states spaced `dt` apart.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    v0: &[f64],
    dt: f64,
    n_samples: usize,
    substeps: usize,
) -> Result<Vec<Vec<f64>>> {
    check_len("initial state", field.dim(), v0.len())?;
    ode::integrate(|y, dy| field.eval_into(y, dy), v0, dt, n_samples, substeps)
}

/// Result of integrating many starts together.
#[derive(Debug, Clone)]
pub struct BatchIntegration {
    pub rows: usize,
    pub dim: usize,
    /// `states[s]` holds all rows at sample `s`, row-major.
    pub states: Vec<Vec<f64>>,
    /// First sample index at which a row became non-finite.
    pub diverged: Vec<Option<usize>>,
}

impl BatchIntegration {
    pub fn row(&self, s: usize, r: usize) -> &[f64] {
        &self.states[s][r * self.dim..(r + 1) * self.dim]
    }
}

/// Integrate row-major `starts` in lockstep. A row that turns non-finite is
/// frozen at its last finite state and reported in `diverged`.
pub fn integrate_batch<F: VectorField + ?Sized>(
    field: &F,
    starts: &[f64],
    dt: f64,
    n_samples: usize,
    substeps: usize,
) -> Result<BatchIntegration> {
    validate_grid(dt, n_samples, substeps)?;
    let d = field.dim();
    if starts.len() % d != 0 {
        return Err(Error::Dimension {
            context: "batch starts",
            expected: d,
            got: starts.len() % d,
        });
    }
    let rows = starts.len() / d;
    let h = dt / substeps as f64;
    let mut y = starts.to_vec();
    let mut diverged = vec![None; rows];
    let mut states = Vec::with_capacity(n_samples);
    states.push(y.clone());
    let mut ws = Rk4Workspace::new(y.len());
    for s in 1..n_samples {
        let prev = y.clone();
        {
            let dead = &diverged;
            let mut f = |v: &[f64], out: &mut [f64]| -> Result<()> {
                field.eval_batch(v, out)?;
                for (r, dv) in dead.iter().enumerate() {
                    if dv.is_some() {
                        out[r * d..(r + 1) * d].fill(0.0);
                    }
                }
                Ok(())
            };
            for _ in 0..substeps {
                ode::rk4_step(&mut f, &mut y, h, &mut ws)?;
            }
        }
        for r in 0..rows {
            let row = &mut y[r * d..(r + 1) * d];
            if diverged[r].is_none() && row.iter().any(|v| !v.is_finite()) {
                diverged[r] = Some(s);
            }
            if diverged[r].is_some() {
                row.copy_from_slice(&prev[r * d..(r + 1) * d]);
            }
        }
        states.push(y.clone());
    }
    Ok(BatchIntegration {
        rows,
        dim: d,
        states,
        diverged,
    })
}

/// Encoded trajectory from a field rollout.
pub fn integrate_nsv<F: VectorField + ?Sized>(
    field: &F,
    v0: &[f64],
    dt: f64,
    n_samples: usize,
    substeps: usize,
    provenance: crate::lift::Provenance,
) -> Result<NsvTrajectory> {
    Ok(NsvTrajectory {
        states: integrate(field, v0, dt, n_samples, substeps)?,
        dt,
        provenance,
    })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Linear-interpolation percentile of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    pub threshold: f64,
}

/// Drop every trajectory with a step longer than the `pct`-th percentile of
/// all step lengths in the set.
pub fn filter_trajectories(trajs: &[NsvTrajectory], pct: f64) -> Result<FilterOutcome> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::Config(format!(
            "percentile must be in (0, 100], got {pct}"
        )));
    }
    let steps: Vec<f64> = trajs
        .iter()
        .flat_map(|t| t.states.windows(2).map(|w| euclid(&w[1], &w[0])))
        .collect();
    if steps.is_empty() {
        return Err(Error::Degenerate("no steps to filter".into()));
    }
    let threshold = percentile(&steps, pct);
    let (mut kept, mut removed) = (Vec::new(), Vec::new());
    for (i, t) in trajs.iter().enumerate() {
        if t.states
            .windows(2)
            .any(|w| euclid(&w[1], &w[0]) > threshold)
        {
            removed.push(i);
        } else {
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Err(Error::Degenerate(
            "filtering removed every trajectory".into(),
        ));
    }
    Ok(FilterOutcome {
        kept,
        removed,
        threshold,
    })
}

/// Normalized geometric horizon weights `ρ^i / Σ ρ^j` for `len` steps.
pub fn horizon_weights(rho: f64, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|i| rho.powi(i as i32)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

/// One rollout request: integrate `len` steps from sample `start` of `states`.
#[derive(Clone, Copy)]
struct Rollout<'a> {
    states: &'a [Vec<f64>],
    start: usize,
    len: usize,
}

impl<'a> Rollout<'a> {
    /// Rollout to the end of the trajectory, shortened to `cap` steps.
    fn new(states: &'a [Vec<f64>], start: usize, cap: usize) -> Self {
        let len = (states.len() - 1 - start).min(cap);
        Self { states, start, len }
    }

    fn remaining(&self) -> usize {
        self.len
    }
}

/// Steps after which `ρ^n` falls below `cutoff`; unbounded when `cutoff` is 0.
pub fn horizon_cap(rho: f64, cutoff: f64) -> usize {
    if cutoff <= 0.0 {
        return usize::MAX;
    }
    ((cutoff.ln() / rho.ln()).ceil() as usize + 1).max(1)
}

struct StageCaches {
    rows: usize,
    caches: [ForwardCache; 4],
}

/// Sum over rollouts of the ρ-weighted mean distance between the integrated
/// and observed states, plus its parameter gradient (when `grads` is given).
fn rollout_loss(
    model: &FieldModel,
    rollouts: &mut [Rollout<'_>],
    rho: f64,
    dt: f64,
    substeps: usize,
    mut grads: Option<&mut Gradients>,
) -> Result<f64> {
    let d = model.d;
    rollouts.sort_by_key(|r| std::cmp::Reverse(r.remaining()));
    let p = rollouts.len();
    if p == 0 {
        return Ok(0.0);
    }
    let steps = rollouts[0].remaining();
    let h = dt / substeps as f64;
    let active: Vec<usize> = (0..steps)
        .map(|s| rollouts.iter().take_while(|r| r.remaining() > s).count())
        .collect();
    let weights: Vec<Vec<f64>> = rollouts
        .iter()
        .map(|r| horizon_weights(rho, r.remaining()))
        .collect();

    let mut y = Vec::with_capacity(p * d);
    for r in rollouts.iter() {
        check_len("trajectory state", d, r.states[r.start].len())?;
        y.extend_from_slice(&r.states[r.start]);
    }
    let keep = grads.is_some();
    let mut tape: Vec<StageCaches> = Vec::new();
    let mut predictions: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mlp = &model.mlp;
    for &a in active.iter() {
        let n = a * d;
        for _ in 0..substeps {
            let y0 = &y[..n];
            let c1 = mlp.forward_batch(y0, a)?;
            let k1 = c1.output().to_vec();
            let u2: Vec<f64> = y0.iter().zip(&k1).map(|(v, k)| v + 0.5 * h * k).collect();
            let c2 = mlp.forward_batch(&u2, a)?;
            let k2 = c2.output().to_vec();
            let u3: Vec<f64> = y0.iter().zip(&k2).map(|(v, k)| v + 0.5 * h * k).collect();
            let c3 = mlp.forward_batch(&u3, a)?;
            let k3 = c3.output().to_vec();
            let u4: Vec<f64> = y0.iter().zip(&k3).map(|(v, k)| v + h * k).collect();
            let c4 = mlp.forward_batch(&u4, a)?;
            let k4 = c4.output();
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if keep {
                tape.push(StageCaches {
                    rows: a,
                    caches: [c1, c2, c3, c4],
                });
            }
        }
        predictions.push(y[..n].to_vec());
    }

    let mut loss = 0.0;
    let mut dpred: Vec<Vec<f64>> = Vec::with_capacity(steps);
    for (s, pred) in predictions.iter().enumerate() {
        let mut g = vec![0.0; pred.len()];
        for (k, r) in rollouts.iter().enumerate().take(active[s]) {
            let target = &r.states[r.start + s + 1];
            let yk = &pred[k * d..(k + 1) * d];
            let dist = euclid(yk, target);
            if !dist.is_finite() {
                return Ok(f64::NAN);
            }
            let w = weights[k][s];
            loss += w * dist;
            if dist > 1e-12 {
                for j in 0..d {
                    g[k * d + j] = w * (yk[j] - target[j]) / dist;
                }
            }
        }
        dpred.push(g);
    }

    if let Some(g) = grads.as_deref_mut() {
        let mut lam = vec![0.0; p * d];
        let mut tape_iter = tape.iter().rev();
        for s in (0..steps).rev() {
            for (l, v) in lam.iter_mut().zip(&dpred[s]) {
                *l += v;
            }
            for _ in 0..substeps {
                let st = tape_iter.next().expect("tape matches steps");
                let n = st.rows * d;
                let lam_s = &lam[..n];
                let dk4: Vec<f64> = lam_s.iter().map(|l| l * h / 6.0).collect();
                let mut dk3: Vec<f64> = lam_s.iter().map(|l| l * h / 3.0).collect();
                let mut dk2 = dk3.clone();
                let mut dk1 = dk4.clone();
                let mut dy = lam_s.to_vec();
                let g4 = mlp.backward_into(&st.caches[3], &dk4, Some(&mut *g))?;
                for i in 0..n {
                    dk3[i] += h * g4[i];
                    dy[i] += g4[i];
                }
                let g3 = mlp.backward_into(&st.caches[2], &dk3, Some(&mut *g))?;
                for i in 0..n {
                    dk2[i] += 0.5 * h * g3[i];
                    dy[i] += g3[i];
                }
                let g2 = mlp.backward_into(&st.caches[1], &dk2, Some(&mut *g))?;
                for i in 0..n {
                    dk1[i] += 0.5 * h * g2[i];
                    dy[i] += g2[i];
                }
                let g1 = mlp.backward_into(&st.caches[0], &dk1, Some(&mut *g))?;
                for i in 0..n {
                    dy[i] += g1[i];
                }
                lam[..n].copy_from_slice(&dy);
            }
        }
    }
    Ok(loss)
}

/// Integrated multi-horizon loss over every start of every trajectory,
/// divided by the number of trajectories.
pub fn field_loss(
    model: &FieldModel,
    trajs: &[&[Vec<f64>]],
    rho: f64,
    dt: f64,
    substeps: usize,
) -> Result<(f64, Gradients)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
    }
    let mut rollouts = Vec::new();
    for t in trajs {
        if t.len() < 2 {
            return Err(Error::Config(
                "field loss needs trajectories of length >= 2".into(),
            ));
        }
        for m in 0..t.len() - 1 {
            rollouts.push(Rollout::new(t, m, usize::MAX));
        }
    }
    let mut g = Gradients::zeros_like(&model.mlp);
    let loss = rollout_loss(model, &mut rollouts, rho, dt, substeps, Some(&mut g))?;
    let scale = 1.0 / trajs.len().max(1) as f64;
    g.scale(scale);
    Ok((loss * scale, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    Integrated,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTrainConfig {
    pub mode: TrainingMode,
    pub steps: usize,
    /// Rollouts (or regression points, in finite-difference mode) per step.
    pub batch_size: usize,
    pub substeps: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_cycle: usize,
    pub filter_percentile: f64,
    #[serde(default)]
    pub seed: u64,
    pub adam: AdamConfig,
    pub lr_final_fraction: f64,
    pub grad_clip: Option<f64>,
    pub eval_every: usize,
    pub log_every: usize,
    /// Spacing of validation start indices.
    pub val_stride: usize,
    /// Horizon weight used for integrated-mode validation.
    pub val_rho: f64,
    /// Rollouts stop once `ρ^n` drops below this; 0 keeps the full horizon.
    pub weight_cutoff: f64,
}

impl FieldTrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            mode: TrainingMode::Integrated,
            steps: 2000,
            batch_size: 32,
            substeps: 1,
            rho_min: 0.1,
            rho_max: 0.9,
            rho_cycle: 1000,
            filter_percentile: 99.0,
            seed,
            adam: AdamConfig::default(),
            lr_final_fraction: 1.0,
            grad_clip: None,
            eval_every: 100,
            log_every: 10,
            val_stride: 5,
            val_rho: 0.5,
            weight_cutoff: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.rho_min && self.rho_min <= self.rho_max && self.rho_max < 1.0) {
            return Err(Error::Config(
                "rho range must satisfy 0 < min <= max < 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.weight_cutoff) {
            return Err(Error::Config("weight cutoff must lie in [0, 1)".into()));
        }
        if !(self.filter_percentile > 0.0 && self.filter_percentile <= 100.0) {
            return Err(Error::Config(
                "filter percentile must be in (0, 100]".into(),
            ));
        }
        if self.batch_size == 0
            || self.substeps == 0
            || self.rho_cycle == 0
            || self.eval_every == 0
            || self.log_every == 0
            || self.val_stride == 0
        {
            return Err(Error::Config(
                "field training sizes and intervals must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// Cyclic linear ρ from `rho_min` to `rho_max`.
pub fn rho_schedule(step: usize, cfg: &FieldTrainConfig) -> f64 {
    let pos = (step % cfg.rho_cycle) as f64 / cfg.rho_cycle as f64;
    cfg.rho_min + (cfg.rho_max - cfg.rho_min) * pos
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStepLog {
    pub step: usize,
    pub rho: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTrainingReport {
    pub mode: TrainingMode,
    pub log: Vec<FieldStepLog>,
    pub validation: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_validation: f64,
    pub diverged_at: Option<usize>,
}

impl FieldTrainingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,rho,loss\n");
        for l in &self.log {
            s.push_str(&format!("{},{},{}\n", l.step, l.rho, l.loss));
        }
        s
    }
}

/// Mean squared error of `F̂(V_n)` against forward differences.
fn fd_loss(
    model: &FieldModel,
    points: &[(&[f64], &[f64])],
    dt: f64,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let d = model.d;
    let n = points.len();
    let mut x = Vec::with_capacity(n * d);
    let mut target = Vec::with_capacity(n * d);
    for (a, b) in points {
        x.extend_from_slice(a);
        target.extend(a.iter().zip(b.iter()).map(|(u, v)| (v - u) / dt));
    }
    let cache = model.mlp.forward_batch(&x, n)?;
    let out = cache.output();
    let mut dy = vec![0.0; out.len()];
    let mut loss = 0.0;
    for i in 0..out.len() {
        let r = out[i] - target[i];
        loss += r * r;
        dy[i] = 2.0 * r / n as f64;
    }
    if let Some(g) = grads {
        model.mlp.backward_into(&cache, &dy, Some(g))?;
    }
    Ok(loss / n as f64)
}

fn validation_loss(
    model: &FieldModel,
    val: &[&[Vec<f64>]],
    dt: f64,
    cfg: &FieldTrainConfig,
) -> Result<f64> {
    match cfg.mode {
        TrainingMode::Integrated => {
            let mut rollouts: Vec<Rollout<'_>> = val
                .iter()
                .flat_map(|t| {
                    (0..t.len().saturating_sub(1))
                        .step_by(cfg.val_stride)
                        .map(move |m| {
                            Rollout::new(t, m, horizon_cap(cfg.val_rho, cfg.weight_cutoff))
                        })
                })
                .collect();
            let n = rollouts.len().max(1);
            Ok(rollout_loss(model, &mut rollouts, cfg.val_rho, dt, cfg.substeps, None)? / n as f64)
        }
        TrainingMode::FiniteDifference => {
            let pts: Vec<(&[f64], &[f64])> = val
                .iter()
                .flat_map(|t| t.windows(2).map(|w| (w[0].as_slice(), w[1].as_slice())))
                .collect();
            if pts.is_empty() {
                return Ok(0.0);
            }
            fd_loss(model, &pts, dt, None)
        }
    }
}

/// Train a field on (already filtered) trajectories; keeps the checkpoint
/// with the lowest validation loss.
pub fn train_field(
    train: &[&NsvTrajectory],
    val: &[&NsvTrajectory],
    cfg: &FieldTrainConfig,
) -> Result<(FieldModel, FieldTrainingReport)> {
    cfg.validate()?;
    let train: Vec<&NsvTrajectory> = train.iter().copied().filter(|t| t.len() >= 2).collect();
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(
            "field training needs train and validation trajectories".into(),
        ));
    }
    let d = train[0].dim();
    let dt = train[0].dt;
    if train
        .iter()
        .chain(val.iter())
        .any(|t| t.dim() != d || (t.dt - dt).abs() > 1e-12 * dt)
    {
        return Err(Error::Config(
            "trajectories disagree on dimension or dt".into(),
        ));
    }
    let tr: Vec<&[Vec<f64>]> = train.iter().map(|t| t.states.as_slice()).collect();
    let va: Vec<&[Vec<f64>]> = val.iter().map(|t| t.states.as_slice()).collect();

    let mut model = FieldModel::init(d, cfg.seed)?;
    model.config_fingerprint = cfg.fingerprint();
    let mut opt = AdamState::new(&model.mlp, cfg.adam);
    let mut rng = rng_for(cfg.seed, "field-batches");
    let mut report = FieldTrainingReport {
        mode: cfg.mode,
        log: Vec::new(),
        validation: Vec::new(),
        best_step: 0,
        best_validation: f64::INFINITY,
        diverged_at: None,
    };
    let mut best: Option<FieldModel> = None;

    for step in 0..cfg.steps {
        let rho = rho_schedule(step, cfg);
        let mut g = Gradients::zeros_like(&model.mlp);
        let loss = match cfg.mode {
            TrainingMode::Integrated => {
                let cap = horizon_cap(rho, cfg.weight_cutoff);
                let mut rollouts: Vec<Rollout<'_>> = (0..cfg.batch_size)
                    .map(|_| {
                        let t = tr[rng.random_range(0..tr.len())];
                        Rollout::new(t, rng.random_range(0..t.len() - 1), cap)
                    })
                    .collect();
                let l = rollout_loss(&model, &mut rollouts, rho, dt, cfg.substeps, Some(&mut g))?;
                g.scale(1.0 / cfg.batch_size as f64);
                l / cfg.batch_size as f64
            }
            TrainingMode::FiniteDifference => {
                let pts: Vec<(&[f64], &[f64])> = (0..cfg.batch_size)
                    .map(|_| {
                        let t = tr[rng.random_range(0..tr.len())];
                        let n = rng.random_range(0..t.len() - 1);
                        (t[n].as_slice(), t[n + 1].as_slice())
                    })
                    .collect();
                fd_loss(&model, &pts, dt, Some(&mut g))?
            }
        };
        if !loss.is_finite() || !g.is_finite() {
            log::error!("field training diverged at step {step}");
            report.diverged_at = Some(step);
            break;
        }
        if let Some(c) = cfg.grad_clip {
            g.clip_norm(c);
        }
        let frac = step as f64 / cfg.steps.max(1) as f64;
        let lr = cfg.adam.lr * (1.0 - (1.0 - cfg.lr_final_fraction) * frac);
        opt.step_with_lr(&mut model.mlp, &g, lr)?;
        if step % cfg.log_every == 0 {
            report.log.push(FieldStepLog { step, rho, loss });
        }
        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps {
            let v = validation_loss(&model, &va, dt, cfg)?;
            report.validation.push((step + 1, v));
            if v.is_finite() && v < report.best_validation {
                report.best_validation = v;
                report.best_step = step + 1;
                best = Some(model.clone());
            }
        }
    }
    let model = match best {
        Some(m) => m,
        None => {
            report.best_step = 0;
            model
        }
    };
    Ok((model, report))
}

/// Mean one-step prediction error `‖V̂_{m→m+1} − V_{m+1}‖` over all starts.
pub fn single_step_error<F: VectorField + ?Sized>(
    field: &F,
    trajs: &[&NsvTrajectory],
    substeps: usize,
) -> Result<f64> {
    let mut starts = Vec::new();
    let mut targets = Vec::new();
    let mut dt = None;
    for t in trajs {
        dt.get_or_insert(t.dt);
        for w in t.states.windows(2) {
            starts.extend_from_slice(&w[0]);
            targets.extend_from_slice(&w[1]);
        }
    }
    let Some(dt) = dt else {
        return Err(Error::Degenerate("no trajectories".into()));
    };
    let out = integrate_batch(field, &starts, dt, 2, substeps)?;
    let d = field.dim();
    let n = starts.len() / d;
    if n == 0 {
        return Err(Error::Degenerate("no steps".into()));
    }
    let total: f64 = (0..n)
        .map(|r| euclid(out.row(1, r), &targets[r * d..(r + 1) * d]))
        .sum();
    Ok(total / n as f64)
}

/// Mean error over the full horizon when integrating each trajectory from its
/// first state.
pub fn full_horizon_error<F: VectorField + ?Sized>(
    field: &F,
    trajs: &[&NsvTrajectory],
    substeps: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for t in trajs {
        let pred = integrate_batch(field, &t.states[0], t.dt, t.len(), substeps)?;
        for s in 1..t.len() {
            total += euclid(pred.row(s, 0), &t.states[s]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("no trajectories".into()));
    }
    Ok(total / count as f64)
}
