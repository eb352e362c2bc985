//! The embedding autoencoder: maps standardized observations to bounded
//! neural state variables `V ∈ [-1, 1]^d` and back.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::lift::{Dataset, LatentSeries, Provenance, Split};
use crate::nn::{chain, Activation, AdamConfig, AdamState, Gradients, InitConfig, Mlp};
use crate::rng::{derive_seed, rng_for};
use crate::transport::{sinkhorn_divergence, uniform_reference, SinkhornConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    Box,
    Torus,
}

fn wrap(delta: f64, mode: DistanceMode) -> f64 {
    match mode {
        DistanceMode::Box => delta,
        DistanceMode::Torus => delta - 2.0 * (delta / 2.0).round(),
    }
}

/// Distance between two state vectors; torus mode wraps each coordinate on
/// the period-2 domain.
pub fn nsv_distance(a: &[f64], b: &[f64], mode: DistanceMode) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| wrap(x - y, mode).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Distance and its gradient with respect to `a` (zero at coincidence).
fn distance_with_grad(a: &[f64], b: &[f64], mode: DistanceMode) -> (f64, Vec<f64>) {
    let deltas: Vec<f64> = a.iter().zip(b).map(|(x, y)| wrap(x - y, mode)).collect();
    let d = deltas.iter().map(|v| v * v).sum::<f64>().sqrt();
    let g = if d > 1e-12 {
        deltas.iter().map(|v| v / d).collect()
    } else {
        vec![0.0; a.len()]
    };
    (d, g)
}

/// Hinge penalty on two-step and (when `eta` is 1) one-step gaps.
pub fn smoothness_loss(
    v0: &[f64],
    v1: &[f64],
    v2: &[f64],
    l0: f64,
    eta: f64,
    mode: DistanceMode,
) -> f64 {
    let d2 = nsv_distance(v2, v0, mode);
    let d1 = nsv_distance(v1, v0, mode);
    (d2 - 2.0 * l0).max(0.0) + eta * (d1 - l0).max(0.0)
}

/// Cyclic annealing: zero, linear ramp to one, hold, then restart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub cycle: usize,
    pub zero_fraction: f64,
    pub ramp_fraction: f64,
    pub hold_fraction: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            cycle: 2000,
            zero_fraction: 0.25,
            ramp_fraction: 0.25,
            hold_fraction: 0.5,
        }
    }
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.zero_fraction, self.ramp_fraction, self.hold_fraction];
        if self.cycle == 0
            || fr.iter().any(|f| !(0.0..=1.0).contains(f))
            || fr.iter().sum::<f64>() > 1.0 + 1e-12
        {
            return Err(Error::Config(
                "beta schedule needs a positive cycle and fractions summing to at most 1".into(),
            ));
        }
        Ok(())
    }
}

pub fn beta_schedule(step: usize, s: &BetaSchedule) -> f64 {
    let pos = (step % s.cycle) as f64 / s.cycle as f64;
    let ramp_end = s.zero_fraction + s.ramp_fraction;
    if pos < s.zero_fraction {
        0.0
    } else if pos < ramp_end {
        (pos - s.zero_fraction) / s.ramp_fraction
    } else if pos < ramp_end + s.hold_fraction {
        1.0
    } else {
        0.0
    }
}

/// Per-dimension z-score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        for r in rows {
            if mean.is_empty() {
                mean = vec![0.0; r.len()];
                m2 = vec![0.0; r.len()];
            }
            check_len("standardization row", mean.len(), r.len())?;
            n += 1;
            for k in 0..r.len() {
                let delta = r[k] - mean[k];
                mean[k] += delta / n as f64;
                m2[k] += delta * (r[k] - mean[k]);
            }
        }
        if n < 2 {
            return Err(Error::Degenerate(
                "need at least two rows to standardize".into(),
            ));
        }
        let std = m2.iter().map(|v| (v / n as f64).sqrt().max(1e-8)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(
            x.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    #[serde(default)]
    pub d: usize,
    pub w_reconstruct: f64,
    pub w_smooth: f64,
    pub w_space: f64,
    /// Smoothness threshold; `None` means `2√d / seq_len`.
    pub l0: Option<f64>,
    pub eta: f64,
    pub distance_mode: DistanceMode,
    pub beta: BetaSchedule,
    /// Fixed β in place of the schedule (ablations).
    pub beta_constant: Option<f64>,
    pub sinkhorn: SinkhornConfig,
    /// Triplets per step.
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    pub adam: AdamConfig,
    /// Learning rate decays linearly to `lr · lr_final_fraction`.
    pub lr_final_fraction: f64,
    pub grad_clip: Option<f64>,
    pub encoder_omega0: f64,
    pub decoder_omega0: f64,
    pub eval_every: usize,
    pub log_every: usize,
    /// Initializations tried for `screen_steps` each; the one with the lowest
    /// validation reconstruction is trained to the end.
    #[serde(default = "one")]
    pub restarts: usize,
    #[serde(default)]
    pub screen_steps: usize,
}

fn one() -> usize {
    1
}

impl EmbedConfig {
    pub fn new(d: usize, seed: u64) -> Self {
        Self {
            d,
            w_reconstruct: 1.0,
            w_smooth: 1.0,
            w_space: 0.1,
            l0: None,
            eta: 1.0,
            distance_mode: DistanceMode::Box,
            beta: BetaSchedule::default(),
            beta_constant: None,
            sinkhorn: SinkhornConfig::default(),
            batch_size: 64,
            steps: 4000,
            seed,
            adam: AdamConfig::default(),
            lr_final_fraction: 1.0,
            grad_clip: None,
            encoder_omega0: 30.0,
            decoder_omega0: 30.0,
            eval_every: 100,
            log_every: 10,
            restarts: 1,
            screen_steps: 0,
        }
    }

    /// Same configuration with the regularizers switched off.
    pub fn baseline(&self) -> Self {
        Self {
            w_smooth: 0.0,
            w_space: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config(
                "embedding dimension must be at least 1".into(),
            ));
        }
        if [self.w_reconstruct, self.w_smooth, self.w_space]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if let Some(l0) = self.l0 {
            if !(l0 > 0.0) {
                return Err(Error::Config(format!("l0 must be positive, got {l0}")));
            }
        }
        if self.eta != 0.0 && self.eta != 1.0 {
            return Err(Error::Config(format!(
                "eta must be 0 or 1, got {}",
                self.eta
            )));
        }
        if self.restarts == 0 || (self.restarts > 1 && self.screen_steps == 0) {
            return Err(Error::Config(
                "restarts must be at least 1 and screening needs screen_steps > 0".into(),
            ));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "batch size and intervals must be positive".into(),
            ));
        }
        self.beta.validate()?;
        self.sinkhorn.validate()
    }

    pub fn l0_for(&self, seq_len: usize) -> f64 {
        self.l0
            .unwrap_or_else(|| 2.0 * (self.d as f64).sqrt() / seq_len.max(1) as f64)
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// Encoder `64→128→64→32→d` (all sine) and decoder `d→32→64→128→64`
/// (sine, final layer linear).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub standardization: Standardization,
    pub d: usize,
    pub config_fingerprint: String,
}

pub fn encoder_widths(input: usize, d: usize) -> Vec<usize> {
    vec![input, 128, 64, 32, d]
}

pub fn decoder_widths(d: usize, output: usize) -> Vec<usize> {
    vec![d, 32, 64, 128, output]
}

impl EmbeddingModel {
    pub fn init(
        input_dim: usize,
        cfg: &EmbedConfig,
        standardization: Standardization,
    ) -> Result<Self> {
        check_len("standardization", input_dim, standardization.mean.len())?;
        let enc = chain(
            &encoder_widths(input_dim, cfg.d),
            Activation::Sine,
            Activation::Sine,
        );
        let dec = chain(
            &decoder_widths(cfg.d, input_dim),
            Activation::Sine,
            Activation::Identity,
        );
        Ok(Self {
            encoder: Mlp::new(
                &enc,
                derive_seed(cfg.seed, "encoder"),
                &InitConfig {
                    omega0: cfg.encoder_omega0,
                },
            )?,
            decoder: Mlp::new(
                &dec,
                derive_seed(cfg.seed, "decoder"),
                &InitConfig {
                    omega0: cfg.decoder_omega0,
                },
            )?,
            standardization,
            d: cfg.d,
            config_fingerprint: cfg.fingerprint(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.encode_batch(&[obs])
            .map(|mut v| v.pop().expect("one row"))
    }

    /// Encode many observations at once.
    pub fn encode_batch(&self, obs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut x = Vec::with_capacity(obs.len() * self.input_dim());
        for o in obs {
            check_len("observation", self.input_dim(), o.len())?;
            self.standardization.apply_into(o, &mut x);
        }
        let y = self.encoder.predict_batch(&x, obs.len())?;
        Ok(y.chunks(self.d).map(|c| c.to_vec()).collect())
    }

    /// Decode to observation units.
    pub fn decode(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("state variable", self.d, v.len())?;
        Ok(self.standardization.invert(&self.decoder.predict(v)?))
    }

    /// Mean per-observation squared reconstruction error in standardized units.
    pub fn reconstruction_error<'a>(
        &self,
        series: impl Iterator<Item = &'a LatentSeries>,
    ) -> Result<f64> {
        let mut x = Vec::new();
        let mut rows = 0;
        for s in series {
            for o in &s.observations {
                check_len("observation", self.input_dim(), o.len())?;
                self.standardization.apply_into(o, &mut x);
                rows += 1;
            }
        }
        if rows == 0 {
            return Err(Error::Degenerate("no observations to reconstruct".into()));
        }
        let v = self.encoder.predict_batch(&x, rows)?;
        let xh = self.decoder.predict_batch(&v, rows)?;
        Ok(xh.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / rows as f64)
    }
}

/// Encoded trajectory of state variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsvTrajectory {
    pub states: Vec<Vec<f64>>,
    pub dt: f64,
    pub provenance: Provenance,
}

impl NsvTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }
}

pub fn encode_series(model: &EmbeddingModel, series: &LatentSeries) -> Result<NsvTrajectory> {
    let obs: Vec<&[f64]> = series.observations.iter().map(|o| o.as_slice()).collect();
    Ok(NsvTrajectory {
        states: model.encode_batch(&obs)?,
        dt: series.dt,
        provenance: series.provenance.clone(),
    })
}

/// Encoded trajectories of every split, in dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub train: Vec<NsvTrajectory>,
    pub val: Vec<NsvTrajectory>,
    pub test: Vec<NsvTrajectory>,
}

impl EncodedDataset {
    pub fn split(&self, split: Split) -> &[NsvTrajectory] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn encode_dataset(model: &EmbeddingModel, dataset: &Dataset) -> Result<EncodedDataset> {
    let enc = |s: Split| -> Result<Vec<NsvTrajectory>> {
        dataset
            .split(s)
            .iter()
            .map(|q| encode_series(model, &q.latent))
            .collect()
    };
    Ok(EncodedDataset {
        train: enc(Split::Train)?,
        val: enc(Split::Val)?,
        test: enc(Split::Test)?,
    })
}

/// Consecutive observation triplets, already standardized, stored as three
/// row-major blocks `[L_t; L_{t+Δt}; L_{t+2Δt}]`.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub rows: Vec<f64>,
    pub n: usize,
    pub width: usize,
}

impl TripletBatch {
    pub fn from_triplets(model: &EmbeddingModel, triplets: &[[&[f64]; 3]]) -> Result<Self> {
        let width = model.input_dim();
        let n = triplets.len();
        let mut rows = Vec::with_capacity(3 * n * width);
        for k in 0..3 {
            for t in triplets {
                check_len("triplet observation", width, t[k].len())?;
                model.standardization.apply_into(t[k], &mut rows);
            }
        }
        Ok(Self { rows, n, width })
    }
}

#[derive(Debug, Clone)]
pub struct EmbedLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub smooth: f64,
    pub space: f64,
    pub encoder_grads: Gradients,
    pub decoder_grads: Gradients,
}

/// Composite loss `w_r·SSE + β(w_s·L_smooth + w_f·L_space)` with gradients
/// for both networks. SSE is summed over observation components and averaged
/// over rows; the other terms are batch means. `reference` holds the uniform
/// samples for the space-filling term, one per triplet.
pub fn total_loss(
    batch: &TripletBatch,
    model: &EmbeddingModel,
    beta: f64,
    cfg: &EmbedConfig,
    l0: f64,
    reference: &[f64],
) -> Result<EmbedLoss> {
    let n = batch.n;
    if n == 0 {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let d = model.d;
    let rows = 3 * n;
    let enc = model.encoder.forward_batch(&batch.rows, rows)?;
    let v = enc.output();
    let dec = model.decoder.forward_batch(v, rows)?;
    let xh = dec.output();

    let mut dxh = vec![0.0; xh.len()];
    let mut sse = 0.0;
    for (i, (a, b)) in xh.iter().zip(&batch.rows).enumerate() {
        let r = a - b;
        sse += r * r;
        dxh[i] = cfg.w_reconstruct * 2.0 * r / rows as f64;
    }
    let reconstruction = sse / rows as f64;
    let mut decoder_grads = Gradients::zeros_like(&model.decoder);
    let mut dv = model
        .decoder
        .backward_into(&dec, &dxh, Some(&mut decoder_grads))?;

    let mut smooth = 0.0;
    let ws = beta * cfg.w_smooth;
    for k in 0..n {
        let (i0, i1, i2) = (k * d, (n + k) * d, (2 * n + k) * d);
        let (v0, v1, v2) = (&v[i0..i0 + d], &v[i1..i1 + d], &v[i2..i2 + d]);
        let (d2, g2) = distance_with_grad(v2, v0, cfg.distance_mode);
        let (d1, g1) = distance_with_grad(v1, v0, cfg.distance_mode);
        if d2 > 2.0 * l0 {
            smooth += d2 - 2.0 * l0;
            if ws > 0.0 {
                for j in 0..d {
                    dv[i2 + j] += ws * g2[j] / n as f64;
                    dv[i0 + j] -= ws * g2[j] / n as f64;
                }
            }
        }
        if d1 > l0 && cfg.eta > 0.0 {
            smooth += cfg.eta * (d1 - l0);
            if ws > 0.0 {
                for j in 0..d {
                    dv[i1 + j] += ws * cfg.eta * g1[j] / n as f64;
                    dv[i0 + j] -= ws * cfg.eta * g1[j] / n as f64;
                }
            }
        }
    }
    smooth /= n as f64;

    let wf = beta * cfg.w_space;
    let mut space = 0.0;
    if wf > 0.0 {
        check_len("space-filling reference", n * d, reference.len())?;
        let out = sinkhorn_divergence(&v[..n * d], reference, d, &cfg.sinkhorn)?;
        space = out.value;
        for (g, s) in dv[..n * d].iter_mut().zip(&out.gradient) {
            *g += wf * s;
        }
    }

    let mut encoder_grads = Gradients::zeros_like(&model.encoder);
    model
        .encoder
        .backward_into(&enc, &dv, Some(&mut encoder_grads))?;
    let total = cfg.w_reconstruct * reconstruction + ws * smooth + wf * space;
    Ok(EmbedLoss {
        total,
        reconstruction,
        smooth,
        space,
        encoder_grads,
        decoder_grads,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedStepLog {
    pub step: usize,
    pub beta: f64,
    pub total: f64,
    pub reconstruction: f64,
    pub smooth: f64,
    pub space: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTrainingReport {
    pub log: Vec<EmbedStepLog>,
    /// `(step, validation reconstruction)` at every evaluation.
    pub validation: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_validation: f64,
    pub diverged_at: Option<usize>,
    pub l0: f64,
    /// Seed of the initialization that was trained to the end.
    #[serde(default)]
    pub seed: u64,
    /// `(seed, validation reconstruction)` of every screened initialization.
    #[serde(default)]
    pub screening: Vec<(u64, f64)>,
}

impl EmbedTrainingReport {
    /// Per-step scalars as CSV text.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,beta,total,reconstruction,smooth,space\n");
        for l in &self.log {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                l.step, l.beta, l.total, l.reconstruction, l.smooth, l.space
            ));
        }
        s
    }
}

/// Train on the train split, selecting the checkpoint by validation
/// reconstruction.
///
/// When β follows the schedule, only evaluations taken while β = 1 compete
/// for the checkpoint, so the kept model has seen the full regularizer.
pub fn train_embedding(
    dataset: &Dataset,
    cfg: &EmbedConfig,
) -> Result<(EmbeddingModel, EmbedTrainingReport)> {
    let train: Vec<&LatentSeries> = dataset.train.iter().map(|s| &s.latent).collect();
    let val: Vec<&LatentSeries> = dataset.val.iter().map(|s| &s.latent).collect();
    train_embedding_series(&train, &val, cfg)
}

pub fn train_embedding_series(
    train: &[&LatentSeries],
    val: &[&LatentSeries],
    cfg: &EmbedConfig,
) -> Result<(EmbeddingModel, EmbedTrainingReport)> {
    cfg.validate()?;
    let usable: Vec<&LatentSeries> = train.iter().copied().filter(|s| s.len() >= 3).collect();
    if usable.is_empty() || val.is_empty() {
        return Err(Error::Config(
            "embedding training needs train sequences of length >= 3 and a validation split".into(),
        ));
    }
    let stats = Standardization::fit(
        usable
            .iter()
            .flat_map(|s| s.observations.iter().map(|o| o.as_slice())),
    )?;
    let mut screening = Vec::new();
    let mut seed = cfg.seed;
    if cfg.restarts > 1 {
        let stop = cfg.screen_steps.min(cfg.steps);
        for k in 0..cfg.restarts {
            let s = if k == 0 {
                cfg.seed
            } else {
                derive_seed(cfg.seed, &format!("restart/{k}"))
            };
            let run_cfg = EmbedConfig {
                seed: s,
                ..cfg.clone()
            };
            let (m, rep) = train_from(&usable, val, &run_cfg, stats.clone(), stop)?;
            let v = match rep.diverged_at {
                Some(_) => f64::INFINITY,
                None => m.reconstruction_error(val.iter().copied())?,
            };
            screening.push((s, v));
        }
        // Ties keep the earlier candidate.
        seed = screening
            .iter()
            .fold(
                (cfg.seed, f64::INFINITY),
                |b, &(s, v)| if v < b.1 { (s, v) } else { b },
            )
            .0;
    }
    let run_cfg = EmbedConfig {
        seed,
        ..cfg.clone()
    };
    let (mut model, mut report) = train_from(&usable, val, &run_cfg, stats, cfg.steps)?;
    model.config_fingerprint = cfg.fingerprint();
    report.seed = seed;
    report.screening = screening;
    Ok((model, report))
}

/// Train one initialization for `stop` steps of a `cfg.steps` schedule.
fn train_from(
    usable: &[&LatentSeries],
    val: &[&LatentSeries],
    cfg: &EmbedConfig,
    stats: Standardization,
    stop: usize,
) -> Result<(EmbeddingModel, EmbedTrainingReport)> {
    let mut model = EmbeddingModel::init(usable[0].observations[0].len(), cfg, stats)?;
    let seq_len = usable.iter().map(|s| s.len()).max().unwrap_or(3);
    let l0 = cfg.l0_for(seq_len);

    let mut opt_e = AdamState::new(&model.encoder, cfg.adam);
    let mut opt_d = AdamState::new(&model.decoder, cfg.adam);
    let mut rng = rng_for(cfg.seed, "embed-batches");
    let regularized = cfg.w_smooth > 0.0 || cfg.w_space > 0.0;
    let gate_on_hold = cfg.beta_constant.is_none() && regularized;

    let mut report = EmbedTrainingReport {
        log: Vec::new(),
        validation: Vec::new(),
        best_step: 0,
        best_validation: f64::INFINITY,
        diverged_at: None,
        l0,
        seed: cfg.seed,
        screening: Vec::new(),
    };
    let mut best: Option<EmbeddingModel> = None;
    let mut triplets: Vec<[&[f64]; 3]> = Vec::with_capacity(cfg.batch_size);

    for step in 0..stop {
        let beta = cfg
            .beta_constant
            .unwrap_or_else(|| beta_schedule(step, &cfg.beta));
        triplets.clear();
        for _ in 0..cfg.batch_size {
            let s = usable[rng.random_range(0..usable.len())];
            let t = rng.random_range(0..s.len() - 2);
            triplets.push([
                &s.observations[t],
                &s.observations[t + 1],
                &s.observations[t + 2],
            ]);
        }
        let batch = TripletBatch::from_triplets(&model, &triplets)?;
        let reference = if beta * cfg.w_space > 0.0 {
            uniform_reference(
                cfg.d,
                cfg.batch_size,
                derive_seed(cfg.seed, &format!("reference/{step}")),
            )
            .0
        } else {
            Vec::new()
        };
        let mut loss = total_loss(&batch, &model, beta, cfg, l0, &reference)?;
        if !loss.total.is_finite()
            || !loss.encoder_grads.is_finite()
            || !loss.decoder_grads.is_finite()
        {
            log::error!("embedding training diverged at step {step}");
            report.diverged_at = Some(step);
            break;
        }
        if let Some(c) = cfg.grad_clip {
            loss.encoder_grads.clip_norm(c);
            loss.decoder_grads.clip_norm(c);
        }
        let frac = step as f64 / cfg.steps.max(1) as f64;
        let lr = cfg.adam.lr * (1.0 - (1.0 - cfg.lr_final_fraction) * frac);
        opt_e.step_with_lr(&mut model.encoder, &loss.encoder_grads, lr)?;
        opt_d.step_with_lr(&mut model.decoder, &loss.decoder_grads, lr)?;

        if step % cfg.log_every == 0 {
            report.log.push(EmbedStepLog {
                step,
                beta,
                total: loss.total,
                reconstruction: loss.reconstruction,
                smooth: loss.smooth,
                space: loss.space,
            });
        }
        let last = step + 1 == stop;
        if (step + 1) % cfg.eval_every == 0 || last {
            let v = model.reconstruction_error(val.iter().copied())?;
            report.validation.push((step + 1, v));
            let next_beta = cfg
                .beta_constant
                .unwrap_or_else(|| beta_schedule(step, &cfg.beta));
            let eligible = !gate_on_hold || next_beta >= 1.0;
            if eligible && v.is_finite() && v < report.best_validation {
                report.best_validation = v;
                report.best_step = step + 1;
                best = Some(model.clone());
            }
        }
    }
    let model = match best {
        Some(m) => m,
        None => {
            report.best_step = stop;
            report.best_validation = model.reconstruction_error(val.iter().copied())?;
            model
        }
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_modes() {
        assert!((nsv_distance(&[-0.9], &[0.9], DistanceMode::Box) - 1.8).abs() < 1e-12);
        assert!((nsv_distance(&[-0.9], &[0.9], DistanceMode::Torus) - 0.2).abs() < 1e-12);
        assert_eq!(
            nsv_distance(&[0.3, 0.1], &[0.3, 0.1], DistanceMode::Torus),
            0.0
        );
    }

    #[test]
    fn hinge_examples() {
        let a = [0.0, 0.0];
        assert_eq!(
            smoothness_loss(&a, &a, &a, 0.1, 1.0, DistanceMode::Box),
            0.0
        );
        let v2 = [0.2, 0.0];
        assert_eq!(
            smoothness_loss(&a, &a, &v2, 0.1, 1.0, DistanceMode::Box),
            0.0
        );
        let v2 = [0.5, 0.0];
        assert!(
            (smoothness_loss(&a, &[0.9, 0.0], &v2, 0.1, 0.0, DistanceMode::Box) - 0.3).abs()
                < 1e-12
        );
    }

    #[test]
    fn beta_examples() {
        let s = BetaSchedule::default();
        assert_eq!(beta_schedule(0, &s), 0.0);
        assert_eq!(beta_schedule(1500, &s), 1.0);
        assert!((beta_schedule(750, &s) - 0.5).abs() < 1e-12);
        assert_eq!(beta_schedule(2000, &s), 0.0);
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = EmbedConfig::new(2, 0);
        c.eta = 0.5;
        assert!(c.validate().is_err());
        let mut c = EmbedConfig::new(2, 0);
        c.beta.hold_fraction = 0.8;
        assert!(c.validate().is_err());
    }
}
