//! In-memory pipeline stages shared by the CLI and the acceptance run.

use serde::{Deserialize, Serialize};

use crate::analysis::smoothness::data_ranges;
use crate::analysis::{
    chaos_report, detect_limit_cycle, find_equilibria, smoothness_metric, synthesis,
    tail_average_candidates, CandidateSource, ChaosClass, ChaosReport, EquilibriumSearch,
    LimitCycleReport, SmoothnessOrder,
};
use crate::config::PipelineConfig;
use crate::dimension::{levina_bickel_capped, DimensionEstimate};
use crate::embed::{
    encode_dataset, encode_series, train_embedding, EmbedConfig, EmbedTrainingReport,
    EmbeddingModel, EncodedDataset, NsvTrajectory,
};
use crate::error::{Error, Result};
use crate::field::{
    filter_trajectories, integrate, train_field, FieldModel, FieldTrainConfig, FieldTrainingReport,
};
use crate::lift::{
    build_dataset, lift_trajectory, make_lift, Dataset, LiftParams, Sequence, Split,
};
use crate::rng::rng_for;
use crate::systems::{simulate, State, StateBox, System};
use rand::Rng;

/// Which embedding a stage works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Smooth,
    Baseline,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Smooth => "smooth",
            Variant::Baseline => "baseline",
        }
    }
}

pub fn build_lift(cfg: &PipelineConfig) -> Result<LiftParams> {
    make_lift(
        cfg.features().dim(),
        cfg.lift.observation_dim,
        cfg.sub_seed("lift"),
    )
}

pub fn simulate_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    cfg.validate()?;
    let lift = build_lift(cfg)?;
    build_dataset(
        &cfg.system,
        &lift,
        &cfg.features(),
        &cfg.dataset,
        cfg.sub_seed("dataset"),
    )
}

/// Observations from every split, every `stride`-th sample.
pub fn dimension_points(cfg: &PipelineConfig, ds: &Dataset) -> Vec<Vec<f64>> {
    ds.all()
        .flat_map(|s| {
            s.latent
                .observations
                .iter()
                .step_by(cfg.dimension.stride)
                .cloned()
        })
        .collect()
}

pub fn estimate_dimension(cfg: &PipelineConfig, ds: &Dataset) -> Result<DimensionEstimate> {
    let pts = dimension_points(cfg, ds);
    let dm = &cfg.dimension;
    levina_bickel_capped(
        &pts,
        dm.k_min,
        dm.k_max,
        dm.point_cap,
        cfg.sub_seed("dimension"),
    )
}

/// Embedding width: the configured override, else the rounded estimate.
pub fn embedding_dim(cfg: &PipelineConfig, est: Option<&DimensionEstimate>) -> Result<usize> {
    match (cfg.dimension.intrinsic_dim, est) {
        (Some(d), _) => Ok(d),
        (None, Some(e)) if e.rounded >= 1 => Ok(e.rounded),
        (None, Some(e)) => Err(Error::Degenerate(format!(
            "dimension estimate {} rounds below 1",
            e.raw
        ))),
        (None, None) => Err(Error::Config(
            "dimension.intrinsic_dim is unset and no dimension estimate is available".into(),
        )),
    }
}

pub fn variant_embed_config(cfg: &PipelineConfig, d: usize, variant: Variant) -> EmbedConfig {
    match variant {
        Variant::Smooth => cfg.embed_config(d),
        Variant::Baseline => cfg.baseline_embed_config(d),
    }
}

pub fn train_embed(
    cfg: &PipelineConfig,
    ds: &Dataset,
    d: usize,
    variant: Variant,
) -> Result<(EmbeddingModel, EmbedTrainingReport)> {
    train_embedding(ds, &variant_embed_config(cfg, d, variant))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub enabled: bool,
    pub percentile: f64,
    pub train_threshold: Option<f64>,
    pub train_removed: Vec<usize>,
    pub val_threshold: Option<f64>,
    pub val_removed: Vec<usize>,
}

/// Train/validation trajectories after per-split filtering.
pub fn filtered_splits(
    enc: &EncodedDataset,
    percentile: f64,
    enabled: bool,
) -> Result<(Vec<NsvTrajectory>, Vec<NsvTrajectory>, FilterSummary)> {
    let mut summary = FilterSummary {
        enabled,
        percentile,
        train_threshold: None,
        train_removed: Vec::new(),
        val_threshold: None,
        val_removed: Vec::new(),
    };
    if !enabled {
        return Ok((enc.train.clone(), enc.val.clone(), summary));
    }
    let tr = filter_trajectories(&enc.train, percentile)?;
    let va = filter_trajectories(&enc.val, percentile)?;
    summary.train_threshold = Some(tr.threshold);
    summary.train_removed = tr.removed.clone();
    summary.val_threshold = Some(va.threshold);
    summary.val_removed = va.removed.clone();
    let pick = |src: &[NsvTrajectory], kept: &[usize]| {
        kept.iter().map(|&i| src[i].clone()).collect::<Vec<_>>()
    };
    Ok((
        pick(&enc.train, &tr.kept),
        pick(&enc.val, &va.kept),
        summary,
    ))
}

#[derive(Debug, Clone)]
pub struct FieldRun {
    pub model: FieldModel,
    pub report: FieldTrainingReport,
    pub filter: FilterSummary,
}

pub fn train_field_stage(
    enc: &EncodedDataset,
    fcfg: &FieldTrainConfig,
    filtered: bool,
) -> Result<FieldRun> {
    let (train, val, filter) = filtered_splits(enc, fcfg.filter_percentile, filtered)?;
    let tr: Vec<&NsvTrajectory> = train.iter().collect();
    let va: Vec<&NsvTrajectory> = val.iter().collect();
    let (model, report) = train_field(&tr, &va, fcfg)?;
    Ok(FieldRun {
        model,
        report,
        filter,
    })
}

fn states_of(trajs: &[NsvTrajectory]) -> Vec<&[Vec<f64>]> {
    trajs.iter().map(|t| t.states.as_slice()).collect()
}

/// Per-dimension range of the encoded test split.
pub fn test_ranges(enc: &EncodedDataset) -> Vec<f64> {
    data_ranges(enc.test.iter().map(|t| t.states.as_slice()))
}

pub fn analyze_equilibria(
    cfg: &PipelineConfig,
    field: &FieldModel,
    enc: &EncodedDataset,
) -> Result<EquilibriumSearch> {
    let data = states_of(&enc.test);
    let mut extra = Vec::new();
    if matches!(cfg.system, System::Hopf(_)) {
        let n_tail = 10.min(cfg.dataset.seq_len);
        extra = tail_average_candidates(&data, n_tail)?
            .into_iter()
            .map(|c| (c, CandidateSource::TailAverage))
            .collect();
    }
    find_equilibria(field, &data, &extra, &cfg.equilibrium_config())
}

/// Ground-truth state whose lifted observation is closest to a decoded one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMatch {
    pub state: Vec<f64>,
    /// `|state_i| / width_i` with the widths of the sampling box.
    pub relative_offset: Vec<f64>,
    /// Observation misfit relative to the decoded observation's norm.
    pub relative_residual: f64,
}

fn misfit(lift: &LiftParams, cfg: &PipelineConfig, s: &[f64], target: &[f64]) -> Result<f64> {
    let obs = lift.apply(&cfg.features().apply(s)?)?;
    Ok(obs
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>())
}

/// Grid search over the enlarged sampling box, then compass refinement.
pub fn nearest_ground_truth(
    cfg: &PipelineConfig,
    lift: &LiftParams,
    observation: &[f64],
) -> Result<GroundTruthMatch> {
    let bx: &StateBox = &cfg.dataset.state_box;
    let n = bx.lo.len();
    let lo: Vec<f64> = bx
        .lo
        .iter()
        .zip(&bx.hi)
        .map(|(l, h)| l - 0.1 * (h - l))
        .collect();
    let hi: Vec<f64> = bx
        .lo
        .iter()
        .zip(&bx.hi)
        .map(|(l, h)| h + 0.1 * (h - l))
        .collect();
    let per_dim = ((200_000f64).powf(1.0 / n as f64).floor() as usize).max(3);
    let mut best = (f64::INFINITY, vec![0.0; n]);
    let mut idx = vec![0usize; n];
    let mut s = vec![0.0; n];
    loop {
        for j in 0..n {
            s[j] = lo[j] + (hi[j] - lo[j]) * idx[j] as f64 / (per_dim - 1) as f64;
        }
        let m = misfit(lift, cfg, &s, observation)?;
        if m < best.0 {
            best = (m, s.clone());
        }
        let mut j = 0;
        while j < n {
            idx[j] += 1;
            if idx[j] < per_dim {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == n {
            break;
        }
    }
    let (mut fbest, mut x) = best;
    let mut step: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| (h - l) / (per_dim - 1) as f64)
        .collect();
    for _ in 0..60 {
        let mut improved = false;
        for j in 0..n {
            for sign in [-1.0, 1.0] {
                let mut y = x.clone();
                y[j] += sign * step[j];
                let m = misfit(lift, cfg, &y, observation)?;
                if m < fbest {
                    fbest = m;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|h| *h *= 0.5);
        }
    }
    let norm = observation
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(1e-300);
    Ok(GroundTruthMatch {
        relative_offset: x
            .iter()
            .zip(bx.lo.iter().zip(&bx.hi))
            .map(|(v, (l, h))| v.abs() / (h - l))
            .collect(),
        state: x,
        relative_residual: fbest.sqrt() / norm,
    })
}

/// Limit-cycle detection on long integrations of the learned field.
pub fn analyze_cycles(
    cfg: &PipelineConfig,
    field: &FieldModel,
    enc: &EncodedDataset,
) -> Result<Vec<LimitCycleReport>> {
    let dt = cfg.dataset.dt;
    enc.test
        .iter()
        .take(cfg.analysis.cycle_starts)
        .map(|t| {
            let long = integrate(
                field,
                &t.states[0],
                dt,
                cfg.analysis.cycle_horizon,
                cfg.field.substeps,
            )?;
            detect_limit_cycle(&long, dt, &cfg.analysis.limit_cycle)
        })
        .collect()
}

pub fn analyze_synthesis(
    cfg: &PipelineConfig,
    field: &FieldModel,
    v_eq: &[f64],
    enc: &EncodedDataset,
) -> Result<Vec<synthesis::SynthesisRun>> {
    let sc = &cfg.analysis.synthesis;
    let starts: Vec<Vec<f64>> = enc
        .test
        .iter()
        .take(sc.n_starts)
        .map(|t| t.states[0].clone())
        .collect();
    synthesis::synthesize(
        field,
        v_eq,
        &sc.gammas,
        &starts,
        cfg.dataset.dt,
        sc.horizon,
        cfg.field.substeps,
    )
}

/// Paired initial states for the chaos analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosSet {
    pub sequences: Vec<Sequence>,
    /// Energy at launch, when the system defines one.
    pub energies: Vec<Option<f64>>,
}

/// `n_base` states released at rest with amplitudes spread over the sampling
/// box (and beyond, up to `amplitude_max`), each followed later by a twin
/// displaced by `perturbation` in the first coordinate.
pub fn chaos_set(cfg: &PipelineConfig, lift: &LiftParams) -> Result<ChaosSet> {
    let cs = &cfg.analysis.chaos_set;
    let system = &cfg.system;
    let n = system.state_dim();
    let positions = match system {
        System::Hopf(_) => n,
        _ => n / 2,
    };
    let mut rng = rng_for(cfg.sub_seed("chaos-set"), "amplitudes");
    let bx = &cfg.dataset.state_box;
    let mut base = Vec::with_capacity(cs.n_base);
    for i in 0..cs.n_base {
        let f = cs.amplitude_min
            + (cs.amplitude_max - cs.amplitude_min) * i as f64 / (cs.n_base.max(2) - 1) as f64;
        let mut s = system.rest_state();
        for j in 0..positions {
            let half = 0.5 * (bx.hi[j] - bx.lo[j]);
            s[j] += f * half * rng.random_range(-1.0..1.0);
        }
        base.push(s);
    }
    let twins: Vec<Vec<f64>> = base
        .iter()
        .map(|s| {
            let mut t = s.clone();
            t[0] += cs.perturbation;
            t
        })
        .collect();
    let features = cfg.features();
    let mut sequences = Vec::with_capacity(2 * cs.n_base);
    let mut energies = Vec::with_capacity(2 * cs.n_base);
    for s in base.iter().chain(&twins) {
        let traj = simulate(
            system,
            &State::new(s.clone()),
            cfg.dataset.dt,
            cs.horizon,
            cfg.dataset.substeps,
        )?;
        energies.push(system.energy(s)?);
        sequences.push(lift_trajectory(&traj, lift, &features)?);
    }
    Ok(ChaosSet {
        sequences,
        energies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosOutcome {
    pub report: ChaosReport,
    pub energies: Vec<Option<f64>>,
    pub energy_threshold: Option<f64>,
    /// Share of sequences launched above the threshold that are classed
    /// chaotic.
    pub high_energy_chaotic_fraction: Option<f64>,
}

pub fn analyze_chaos(
    cfg: &PipelineConfig,
    model: &EmbeddingModel,
    set: &ChaosSet,
    v_eq: &[f64],
    ranges: &[f64],
) -> Result<ChaosOutcome> {
    let encoded: Vec<NsvTrajectory> = set
        .sequences
        .iter()
        .map(|s| encode_series(model, &s.latent))
        .collect::<Result<_>>()?;
    let trajs = states_of(&encoded);
    let report = chaos_report(&trajs, v_eq, ranges, &cfg.analysis.chaos)?;
    let thr = cfg.analysis.chaos_set.energy_threshold;
    let high_energy_chaotic_fraction = thr.and_then(|t| {
        let above: Vec<usize> = (0..set.energies.len())
            .filter(|&i| set.energies[i].is_some_and(|e| e > t))
            .collect();
        (!above.is_empty()).then(|| {
            above
                .iter()
                .filter(|&&i| report.classes[i] == ChaosClass::Chaotic)
                .count() as f64
                / above.len() as f64
        })
    });
    Ok(ChaosOutcome {
        report,
        energies: set.energies.clone(),
        energy_threshold: thr,
        high_energy_chaotic_fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSummary {
    pub sm11: Vec<f64>,
    pub sm21: Vec<f64>,
    pub median_sm11: f64,
    pub median_sm21: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Range-normalized `SM_{1,1}` and `SM_{2,1}` over one split.
pub fn smoothness_summary(enc: &EncodedDataset, split: Split) -> Result<SmoothnessSummary> {
    let trajs = enc.split(split);
    let ranges = data_ranges(trajs.iter().map(|t| t.states.as_slice()));
    let metric = |k: usize| -> Result<Vec<f64>> {
        trajs
            .iter()
            .map(|t| smoothness_metric(&t.states, t.dt, k, SmoothnessOrder::L1, Some(&ranges)))
            .collect()
    };
    let sm11 = metric(1)?;
    let sm21 = metric(2)?;
    Ok(SmoothnessSummary {
        median_sm11: median(&sm11),
        median_sm21: median(&sm21),
        sm11,
        sm21,
    })
}

pub fn encode(model: &EmbeddingModel, ds: &Dataset) -> Result<EncodedDataset> {
    encode_dataset(model, ds)
}
