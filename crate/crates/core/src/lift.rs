//! Fixed nonlinear injection of low-dimensional states into a
//! high-dimensional observation space, and dataset generation on top of it.
//!
//! An observation is `A·s + sin(W·s + b)` where `s` is a feature vector built
//! from the raw state. `A` has orthonormal columns, which makes the map
//! injective on its own; the sine features make it nonlinear.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{derive_seed, rng_for};
use crate::systems::{sample_initial_state, simulate, StateBox, System, Trajectory};

pub const DEFAULT_OBSERVATION_DIM: usize = 64;
const MAX_ATTEMPTS: u32 = 8;

/// Converts raw states into lift inputs: angles optionally become
/// `(sin θ, cos θ)` pairs, every other component is divided by its scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub angle_indices: Vec<usize>,
    pub circle_angles: bool,
    pub scales: Vec<f64>,
}

impl FeatureMap {
    /// Identity features for a state of dimension `n`.
    pub fn identity(n: usize) -> Self {
        Self {
            angle_indices: Vec::new(),
            circle_angles: false,
            scales: vec![1.0; n],
        }
    }

    /// Default features: angles on the circle for the pendulums, velocities
    /// divided by the system's characteristic rate.
    pub fn for_system(system: &System, circle_angles: bool) -> Self {
        Self {
            angle_indices: system.angle_indices().to_vec(),
            circle_angles,
            scales: system.feature_scales(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.scales.len()
    }

    pub fn dim(&self) -> usize {
        let extra = if self.circle_angles {
            self.angle_indices.len()
        } else {
            0
        };
        self.scales.len() + extra
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("feature scales must be positive".into()));
        }
        if self.angle_indices.iter().any(|&i| i >= self.scales.len()) {
            return Err(Error::Config("angle index outside the state".into()));
        }
        Ok(())
    }

    pub fn apply(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("feature input", self.scales.len(), s.len())?;
        let mut out = Vec::with_capacity(self.dim());
        for (i, (&v, &scale)) in s.iter().zip(&self.scales).enumerate() {
            if self.circle_angles && self.angle_indices.contains(&i) {
                out.push(v.sin());
                out.push(v.cos());
            } else {
                out.push(v / scale);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftParams {
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major `d_out × d_in`, entries in `[-2, 2]`.
    pub w: Vec<f64>,
    /// Phases in `[0, 2π)`.
    pub b: Vec<f64>,
    /// Row-major `d_out × d_in` with orthonormal columns.
    pub a: Vec<f64>,
    pub seed: u64,
    /// Sub-seed index that produced a full-rank `A`.
    pub attempt: u32,
}

/// Sample a lift. Deterministic in `seed`.
pub fn make_lift(d_in: usize, d_out: usize, seed: u64) -> Result<LiftParams> {
    if d_in == 0 || d_out < 2 * d_in {
        return Err(Error::Config(format!(
            "lift output dimension {d_out} must be at least twice the input dimension {d_in}"
        )));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(seed, &format!("lift/{attempt}"));
        let w: Vec<f64> = (0..d_out * d_in)
            .map(|_| rng.random_range(-2.0..=2.0))
            .collect();
        let b: Vec<f64> = (0..d_out)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let g: Vec<f64> = (0..d_out * d_in)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        if let Some(a) = orthonormal_columns(&g, d_out, d_in) {
            return Ok(LiftParams {
                d_in,
                d_out,
                w,
                b,
                a,
                seed,
                attempt,
            });
        }
    }
    Err(Error::Degenerate(format!(
        "lift matrix stayed rank deficient after {MAX_ATTEMPTS} attempts"
    )))
}

/// Modified Gram–Schmidt on the columns of a row-major `rows × cols` matrix.
fn orthonormal_columns(m: &[f64], rows: usize, cols: usize) -> Option<Vec<f64>> {
    let mut q = m.to_vec();
    for j in 0..cols {
        let orig: f64 = (0..rows)
            .map(|r| m[r * cols + j].powi(2))
            .sum::<f64>()
            .sqrt();
        for k in 0..j {
            let dot: f64 = (0..rows).map(|r| q[r * cols + j] * q[r * cols + k]).sum();
            for r in 0..rows {
                q[r * cols + j] -= dot * q[r * cols + k];
            }
        }
        let norm: f64 = (0..rows)
            .map(|r| q[r * cols + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if !(norm > 1e-8 * orig.max(f64::MIN_POSITIVE)) {
            return None;
        }
        for r in 0..rows {
            q[r * cols + j] /= norm;
        }
    }
    Some(q)
}

impl LiftParams {
    pub fn apply(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("lift input", self.d_in, s.len())?;
        let mut out = vec![0.0; self.d_out];
        for (r, o) in out.iter_mut().enumerate() {
            let row = r * self.d_in;
            let mut lin = 0.0;
            let mut arg = self.b[r];
            for k in 0..self.d_in {
                lin += self.a[row + k] * s[k];
                arg += self.w[row + k] * s[k];
            }
            *o = lin + arg.sin();
        }
        Ok(out)
    }

    /// `‖A‖₂ + ‖W‖_F`, an upper bound on the Lipschitz constant of the lift.
    pub fn lipschitz_bound(&self) -> f64 {
        1.0 + self.w.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn apply_lift(lift: &LiftParams, s: &[f64]) -> Result<Vec<f64>> {
    lift.apply(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub system: String,
    pub lift_seed: u64,
    pub trajectory_seed: Option<u64>,
}

/// Uniformly sampled observations of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSeries {
    pub observations: Vec<Vec<f64>>,
    pub dt: f64,
    pub provenance: Provenance,
}

impl LatentSeries {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// A simulated trajectory paired with its observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub trajectory: Trajectory,
    pub latent: LatentSeries,
}

/// Lift every state of a trajectory.
pub fn lift_trajectory(
    traj: &Trajectory,
    lift: &LiftParams,
    features: &FeatureMap,
) -> Result<Sequence> {
    let observations = traj
        .states
        .iter()
        .map(|s| lift.apply(&features.apply(s)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        latent: LatentSeries {
            observations,
            dt: traj.dt,
            provenance: Provenance {
                system: traj.system.name().to_string(),
                lift_seed: lift.seed,
                trajectory_seed: traj.seed,
            },
        },
        trajectory: traj.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 96,
            val: 12,
            test: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub splits: SplitSizes,
    pub dt: f64,
    pub seq_len: usize,
    pub substeps: usize,
    pub state_box: StateBox,
}

impl DatasetConfig {
    pub fn for_system(system: &System) -> Self {
        Self {
            splits: SplitSizes::default(),
            dt: 1.0 / 60.0,
            seq_len: 60,
            substeps: 10,
            state_box: system.default_box(),
        }
    }

    pub fn validate(&self, system: &System) -> Result<()> {
        if self.splits.train == 0 || self.splits.val == 0 || self.splits.test == 0 {
            return Err(Error::Config(
                "every split needs at least one sequence".into(),
            ));
        }
        if self.seq_len < 2 {
            return Err(Error::Config(format!(
                "sequence length must be at least 2, got {}",
                self.seq_len
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        self.state_box.validate(system.state_dim())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub system: System,
    pub lift: LiftParams,
    pub features: FeatureMap,
    pub config: DatasetConfig,
    pub seed: u64,
    pub train: Vec<Sequence>,
    pub val: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sequence] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Sequence> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

pub fn sequence_seed(seed: u64, split: Split, index: usize) -> u64 {
    derive_seed(seed, &format!("sequence/{}/{index}", split.name()))
}

/// Simulate and lift every sequence of every split.
pub fn build_dataset(
    system: &System,
    lift: &LiftParams,
    features: &FeatureMap,
    config: &DatasetConfig,
    seed: u64,
) -> Result<Dataset> {
    system.validate()?;
    config.validate(system)?;
    features.validate()?;
    check_len(
        "feature map state",
        system.state_dim(),
        features.state_dim(),
    )?;
    check_len("lift input", lift.d_in, features.dim())?;
    let make = |split: Split, n: usize| -> Result<Vec<Sequence>> {
        (0..n)
            .map(|i| {
                let s = sequence_seed(seed, split, i);
                let x0 = sample_initial_state(system, s, &config.state_box)?;
                let mut traj = simulate(system, &x0, config.dt, config.seq_len, config.substeps)?;
                traj.seed = Some(s);
                lift_trajectory(&traj, lift, features)
            })
            .collect()
    };
    Ok(Dataset {
        system: *system,
        lift: lift.clone(),
        features: features.clone(),
        config: config.clone(),
        seed,
        train: make(Split::Train, config.splits.train)?,
        val: make(Split::Val, config.splits.val)?,
        test: make(Split::Test, config.splits.test)?,
    })
}
