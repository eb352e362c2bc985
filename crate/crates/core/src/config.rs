//! The pipeline configuration document (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{ChaosConfig, EquilibriumConfig, LimitCycleConfig};
use crate::embed::EmbedConfig;
use crate::error::{Error, Result};
use crate::field::FieldTrainConfig;
use crate::lift::{DatasetConfig, FeatureMap};
use crate::rng::derive_seed;
use crate::systems::System;
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftConfig {
    pub observation_dim: usize,
    /// Feed angles to the lift as `(sin, cos)` pairs.
    pub circle_angles: bool,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            observation_dim: 64,
            circle_angles: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Every `stride`-th observation of every sequence enters the estimate.
    pub stride: usize,
    /// Points beyond this are subsampled.
    pub point_cap: usize,
    /// Embedding width used instead of the rounded estimate.
    pub intrinsic_dim: Option<usize>,
}

impl Default for DimensionConfig {
    fn default() -> Self {
        Self {
            k_min: 10,
            k_max: 20,
            stride: 1,
            point_cap: 8000,
            intrinsic_dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub gammas: Vec<f64>,
    /// Samples integrated per damped run.
    pub horizon: usize,
    /// Test sequences whose first states seed the damped runs.
    pub n_starts: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.0, 1.0, 2.0, 4.0],
            horizon: 300,
            n_starts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSetConfig {
    /// Base launches; each gets a perturbed twin.
    pub n_base: usize,
    /// Offset of the twin in the first state coordinate.
    pub perturbation: f64,
    /// Launch amplitudes as fractions of the sampling box half-widths.
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub horizon: usize,
    /// Launch energy above which a sequence counts as high-energy.
    pub energy_threshold: Option<f64>,
}

impl Default for ChaosSetConfig {
    fn default() -> Self {
        Self {
            n_base: 50,
            perturbation: 1e-3,
            amplitude_min: 0.1,
            amplitude_max: 1.2,
            horizon: 600,
            energy_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub equilibrium: EquilibriumConfig,
    pub limit_cycle: LimitCycleConfig,
    /// Samples integrated from each test start for cycle detection.
    pub cycle_horizon: usize,
    /// Test starts used for cycle detection.
    pub cycle_starts: usize,
    pub chaos: ChaosConfig,
    pub chaos_set: ChaosSetConfig,
    pub synthesis: SynthesisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub system: System,
    pub dataset: DatasetConfig,
    pub lift: LiftConfig,
    pub dimension: DimensionConfig,
    pub embed: EmbedConfig,
    pub field: FieldTrainConfig,
    pub analysis: AnalysisConfig,
}

fn section(name: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{name}: {m}")),
        other => other,
    }
}

impl PipelineConfig {
    /// Defaults for one system.
    pub fn for_system(system: System, seed: u64) -> Self {
        let dataset = DatasetConfig::for_system(&system);
        let mut embed = EmbedConfig::new(0, 0);
        embed.encoder_omega0 = 5.0;
        embed.decoder_omega0 = 5.0;
        embed.l0 = Some(0.01);
        embed.steps = 2000;
        embed.beta.cycle = 1000;
        embed.lr_final_fraction = 0.1;
        embed.restarts = 4;
        embed.screen_steps = 400;
        let mut field = FieldTrainConfig::new(0);
        field.steps = 3000;
        field.lr_final_fraction = 0.05;
        let mut dimension = DimensionConfig::default();
        let mut chaos_set = ChaosSetConfig::default();
        if matches!(system, System::DoublePendulum(_)) {
            dimension.stride = 3;
            chaos_set.energy_threshold = Some(0.0);
        }
        Self {
            format_version: FORMAT_VERSION,
            seed,
            output_dir: PathBuf::from(format!("runs/{}", system.name())),
            system,
            dataset,
            lift: LiftConfig::default(),
            dimension,
            embed,
            field,
            analysis: AnalysisConfig {
                equilibrium: EquilibriumConfig::new(1.0 / 60.0, 0),
                limit_cycle: LimitCycleConfig::default(),
                cycle_horizon: 1200,
                cycle_starts: 4,
                chaos: ChaosConfig::default(),
                chaos_set,
                synthesis: SynthesisConfig::default(),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The document with each assumed default annotated. Seeds and widths
    /// that the pipeline derives itself are left out.
    pub fn template(&self) -> Result<String> {
        let raw = self.to_toml()?;
        let mut out = String::from(
            "# smoothdyn pipeline configuration.\n# Lines marked `assumed` carry defaults chosen for this implementation.\n",
        );
        let mut table = String::new();
        for line in raw.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') {
                table = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
                out.push_str(line);
                out.push('\n');
                continue;
            }
            let key = trimmed.split('=').next().unwrap_or("").trim();
            let derived = matches!(
                (table.as_str(), key),
                ("embed", "d" | "seed")
                    | ("field", "seed")
                    | ("analysis.equilibrium.stability", "seed" | "dt")
            );
            if derived {
                continue;
            }
            out.push_str(line);
            if !key.is_empty() && is_assumed(&table, key) {
                out.push_str("  # assumed");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "format_version: file has {}, this build reads {FORMAT_VERSION}",
                self.format_version
            )));
        }
        self.system.validate().map_err(|e| section("system", e))?;
        self.dataset
            .validate(&self.system)
            .map_err(|e| section("dataset", e))?;
        let features = self.features();
        if self.lift.observation_dim < 2 * features.dim() {
            return Err(Error::Config(format!(
                "lift.observation_dim: need at least {} for {} features, got {}",
                2 * features.dim(),
                features.dim(),
                self.lift.observation_dim
            )));
        }
        let dm = &self.dimension;
        if dm.k_min < 3 || dm.k_max < dm.k_min {
            return Err(Error::Config(format!(
                "dimension: need 3 <= k_min <= k_max, got {}..{}",
                dm.k_min, dm.k_max
            )));
        }
        if dm.stride == 0 || dm.point_cap <= dm.k_max {
            return Err(Error::Config(
                "dimension: stride must be positive and point_cap above k_max".into(),
            ));
        }
        if dm.intrinsic_dim == Some(0) {
            return Err(Error::Config(
                "dimension.intrinsic_dim: must be at least 1".into(),
            ));
        }
        self.embed_config(self.dimension.intrinsic_dim.unwrap_or(1))
            .validate()
            .map_err(|e| section("embed", e))?;
        self.field_config()
            .validate()
            .map_err(|e| section("field", e))?;
        self.equilibrium_config()
            .stability
            .validate()
            .map_err(|e| section("analysis.equilibrium.stability", e))?;
        let a = &self.analysis;
        if a.cycle_horizon < 9 || a.cycle_starts == 0 {
            return Err(Error::Config(
                "analysis: cycle_horizon must be >= 9 and cycle_starts >= 1".into(),
            ));
        }
        if a.synthesis.gammas.iter().any(|g| !(*g >= 0.0))
            || a.synthesis.horizon < 2
            || a.synthesis.n_starts == 0
        {
            return Err(Error::Config(
                "analysis.synthesis: gammas must be non-negative, horizon >= 2, n_starts >= 1"
                    .into(),
            ));
        }
        let cs = &a.chaos_set;
        if cs.n_base < 1
            || cs.horizon < 2
            || !(cs.perturbation != 0.0)
            || !(0.0 <= cs.amplitude_min && cs.amplitude_min <= cs.amplitude_max)
        {
            return Err(Error::Config(
                "analysis.chaos_set: need n_base >= 1, horizon >= 2, a non-zero perturbation and 0 <= amplitude_min <= amplitude_max".into(),
            ));
        }
        if a.chaos.n_bins == 0 || a.chaos.histogram_bins == 0 || !(a.chaos.near_fraction > 0.0) {
            return Err(Error::Config(
                "analysis.chaos: bins and near_fraction must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn features(&self) -> FeatureMap {
        FeatureMap::for_system(&self.system, self.lift.circle_angles)
    }

    pub fn sub_seed(&self, role: &str) -> u64 {
        derive_seed(self.seed, role)
    }

    /// Embedding settings with the width and seed filled in.
    pub fn embed_config(&self, d: usize) -> EmbedConfig {
        EmbedConfig {
            d,
            seed: self.sub_seed("embed"),
            ..self.embed.clone()
        }
    }

    pub fn baseline_embed_config(&self, d: usize) -> EmbedConfig {
        self.embed_config(d).baseline()
    }

    pub fn field_config(&self) -> FieldTrainConfig {
        FieldTrainConfig {
            seed: self.sub_seed("field"),
            ..self.field.clone()
        }
    }

    pub fn equilibrium_config(&self) -> EquilibriumConfig {
        let mut c = self.analysis.equilibrium.clone();
        c.stability.dt = self.dataset.dt;
        c.stability.seed = self.sub_seed("stability");
        c
    }
}

/// Keys whose defaults are not fixed by the method description.
fn is_assumed(table: &str, key: &str) -> bool {
    const FIXED: &[(&str, &str)] = &[
        ("", "format_version"),
        ("", "seed"),
        ("", "output_dir"),
        ("system", "kind"),
        ("lift", "observation_dim"),
        ("dimension", "k_min"),
        ("dimension", "k_max"),
        ("field", "rho_min"),
        ("field", "rho_max"),
        ("field", "filter_percentile"),
        ("field", "mode"),
        ("analysis.equilibrium", "candidates"),
        ("analysis.equilibrium.stability", "n_directions"),
        ("analysis.equilibrium.stability", "n_radii"),
        ("analysis.equilibrium.stability", "horizon"),
        ("analysis.equilibrium.stability", "epsilons"),
        ("analysis.chaos", "n_bins"),
        ("analysis.chaos", "near_fraction"),
    ];
    if table == "system" && key != "kind" {
        return false;
    }
    if table.starts_with("dataset.splits") {
        return false;
    }
    !FIXED.contains(&(table, key))
}
