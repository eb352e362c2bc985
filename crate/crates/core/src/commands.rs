//! Disk-backed pipeline commands.
//!
//! Every command validates its configuration and the recorded hashes of its
//! inputs before computing anything, writes its outputs atomically under the
//! output directory and finishes with a run manifest in `manifests/`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{EquilibriumSearch, LimitCycleReport};
use crate::config::PipelineConfig;
use crate::dimension::DimensionEstimate;
use crate::embed::{EmbedTrainingReport, EncodedDataset};
use crate::error::{Error, Result};
use crate::field::FieldTrainingReport;
use crate::lift::Dataset;
use crate::persist::{
    atomic_write, input_hash, read_artifact, read_dataset, sha256_bytes, sha256_file,
    write_dataset, write_json, Artifact, EmbedCheckpoint, FieldCheckpoint, DATASET_MANIFEST,
};
use crate::pipeline::{self, ChaosOutcome, FilterSummary, GroundTruthMatch, Variant};
use crate::FORMAT_VERSION;

pub const DATASET_DIR: &str = "dataset";
pub const DIMENSION: &str = "dimension.json";
pub const MANIFEST_DIR: &str = "manifests";

fn dataset_manifest() -> String {
    format!("{DATASET_DIR}/{DATASET_MANIFEST}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    EstimateDim,
    TrainEmbed,
    TrainField,
    AnalyzeEquilibria,
    AnalyzeChaos,
    AnalyzeCycles,
    Synthesize,
    Baseline,
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::EstimateDim => "estimate-dim",
            Command::TrainEmbed => "train-embed",
            Command::TrainField => "train-field",
            Command::AnalyzeEquilibria => "analyze-equilibria",
            Command::AnalyzeChaos => "analyze-chaos",
            Command::AnalyzeCycles => "analyze-cycles",
            Command::Synthesize => "synthesize",
            Command::Baseline => "baseline",
            Command::Pipeline => "pipeline",
        }
    }

    /// Stages run by `pipeline`, in order.
    pub const STAGES: [Command; 9] = [
        Command::Simulate,
        Command::EstimateDim,
        Command::TrainEmbed,
        Command::TrainField,
        Command::AnalyzeEquilibria,
        Command::AnalyzeCycles,
        Command::AnalyzeChaos,
        Command::Synthesize,
        Command::Baseline,
    ];
}

/// Record of one command invocation. Everything except the timestamps is a
/// function of the configuration and the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub command: String,
    pub label: String,
    pub command_line: Vec<String>,
    pub config_sha256: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub command: String,
    pub dry_run: bool,
    /// Output paths relative to the output directory.
    pub outputs: Vec<String>,
}

/// Decoded equilibrium matched against the ground-truth system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriaOutput {
    pub search: EquilibriumSearch,
    pub ground_truth: Vec<GroundTruthMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedOutput {
    pub checkpoint: EmbedCheckpoint,
    pub dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldOutput {
    pub checkpoint: FieldCheckpoint,
    pub filter: FilterSummary,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

/// Runs commands against one output directory.
pub struct Runner {
    pub cfg: PipelineConfig,
    pub dry_run: bool,
    pub command_line: Vec<String>,
    /// Which embedding the field and analysis commands operate on.
    pub variant: Variant,
    /// Train the field without trajectory filtering.
    pub unfiltered: bool,
}

struct Stage<'a> {
    runner: &'a Runner,
    command: Command,
    label: String,
    started: u128,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

impl Stage<'_> {
    fn base(&self) -> &Path {
        &self.runner.cfg.output_dir
    }

    /// Record an input hash; fails on a missing file.
    fn input(&mut self, rel: &str) -> Result<(String, String)> {
        let h = input_hash(self.base(), rel)?;
        if !self.inputs.contains(&h) {
            self.inputs.push(h.clone());
        }
        Ok(h)
    }

    fn load<T: DeserializeOwned>(&mut self, rel: &str) -> Result<Artifact<T>> {
        self.input(rel)?;
        read_artifact(&self.base().join(rel), self.base())
    }

    fn dataset(&mut self) -> Result<Dataset> {
        self.input(&dataset_manifest())?;
        read_dataset(&self.base().join(DATASET_DIR))
    }

    fn save<T: Serialize>(
        &mut self,
        rel: &str,
        kind: &str,
        inputs: Vec<(String, String)>,
        body: T,
    ) -> Result<()> {
        let a = Artifact::new(kind, &self.label, inputs, body);
        let p = self.base().join(rel);
        write_json(&p, &a)?;
        self.outputs.push((rel.to_string(), sha256_file(&p)?));
        Ok(())
    }

    fn save_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.base().join(rel);
        atomic_write(&p, text.as_bytes())?;
        self.outputs
            .push((rel.to_string(), sha256_bytes(text.as_bytes())));
        Ok(())
    }

    fn finish(self) -> Result<Outcome> {
        let r = self.runner;
        let outcome = Outcome {
            command: self.command.name().into(),
            dry_run: r.dry_run,
            outputs: self.outputs.iter().map(|(p, _)| p.clone()).collect(),
        };
        if r.dry_run {
            return Ok(outcome);
        }
        let manifest = RunManifest {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.name().into(),
            label: self.label.clone(),
            command_line: r.command_line.clone(),
            config_sha256: sha256_bytes(r.cfg.to_toml()?.as_bytes()),
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let name = match self.command {
            Command::Simulate | Command::EstimateDim | Command::Baseline | Command::Pipeline => {
                format!("{}.json", self.command.name())
            }
            c => format!("{}-{}.json", c.name(), self.label),
        };
        write_json(&r.cfg.output_dir.join(MANIFEST_DIR).join(name), &manifest)?;
        Ok(outcome)
    }
}

impl Runner {
    pub fn new(cfg: PipelineConfig) -> Self {
        Self {
            cfg,
            dry_run: false,
            command_line: Vec::new(),
            variant: Variant::Smooth,
            unfiltered: false,
        }
    }

    pub fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.cfg.output_dir.join(rel)
    }

    fn rel(&self, variant: Variant, name: &str) -> String {
        format!("{}/{name}", variant.label())
    }

    fn stage(&self, command: Command, label: &str) -> Stage<'_> {
        Stage {
            runner: self,
            command,
            label: label.into(),
            started: now_ms(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Run one command; `pipeline` runs every stage and returns one outcome
    /// per stage.
    pub fn run(&self, cmd: Command) -> Result<Vec<Outcome>> {
        self.cfg.validate()?;
        let v = self.variant;
        Ok(match cmd {
            Command::Simulate => vec![self.simulate()?],
            Command::EstimateDim => vec![self.estimate_dim()?],
            Command::TrainEmbed => vec![self.train_embed(v)?],
            Command::TrainField => vec![self.train_field(v)?],
            Command::AnalyzeEquilibria => vec![self.analyze_equilibria(v)?],
            Command::AnalyzeChaos => vec![self.analyze_chaos(v)?],
            Command::AnalyzeCycles => vec![self.analyze_cycles(v)?],
            Command::Synthesize => vec![self.synthesize(v)?],
            Command::Baseline => self.baseline()?,
            Command::Pipeline => {
                if self.dry_run {
                    // Later stages depend on artifacts that a dry run never writes.
                    return Ok(vec![self.simulate()?]);
                }
                let mut all = Vec::new();
                for c in Command::STAGES {
                    log::info!("pipeline stage {}", c.name());
                    all.extend(self.run(c)?);
                }
                all
            }
        })
    }

    pub fn simulate(&self) -> Result<Outcome> {
        let mut st = self.stage(Command::Simulate, "dataset");
        if self.dry_run {
            return st.finish();
        }
        let ds = pipeline::simulate_dataset(&self.cfg)?;
        let m = write_dataset(&self.path(DATASET_DIR), &ds)?;
        for (rel, h) in m.hashes {
            st.outputs.push((format!("{DATASET_DIR}/{rel}"), h));
        }
        let rel = dataset_manifest();
        st.outputs.push(input_hash(self.out(), &rel)?);
        st.finish()
    }

    pub fn estimate_dim(&self) -> Result<Outcome> {
        let mut st = self.stage(Command::EstimateDim, "dimension");
        let ds = st.dataset()?;
        if self.dry_run {
            return st.finish();
        }
        let est = pipeline::estimate_dimension(&self.cfg, &ds)?;
        log::info!("intrinsic dimension {:.3} -> {}", est.raw, est.rounded);
        let inputs = st.inputs.clone();
        st.save(DIMENSION, "dimension", inputs, est)?;
        st.finish()
    }

    /// Embedding width: the configured override, or `dimension.json`.
    fn dimension(&self, st: &mut Stage) -> Result<usize> {
        if self.cfg.dimension.intrinsic_dim.is_some() {
            return pipeline::embedding_dim(&self.cfg, None);
        }
        let est: Artifact<DimensionEstimate> = st.load(DIMENSION)?;
        pipeline::embedding_dim(&self.cfg, Some(&est.body))
    }

    pub fn train_embed(&self, variant: Variant) -> Result<Outcome> {
        let mut st = self.stage(Command::TrainEmbed, variant.label());
        let ds = st.dataset()?;
        let d = self.dimension(&mut st)?;
        let ecfg = pipeline::variant_embed_config(&self.cfg, d, variant);
        ecfg.validate()?;
        if self.dry_run {
            return st.finish();
        }
        let (model, report): (_, EmbedTrainingReport) =
            pipeline::train_embed(&self.cfg, &ds, d, variant)?;
        let inputs = st.inputs.clone();
        let meta = serde_json::to_value(&ecfg)?;
        let ck = EmbedCheckpoint::new(&model, ecfg.seed, meta);
        let emb = self.rel(variant, "embedding.json");
        st.save(
            &emb,
            "embedding",
            inputs.clone(),
            EmbedOutput {
                checkpoint: ck,
                dimension: d,
            },
        )?;
        st.save(
            &self.rel(variant, "embed_report.json"),
            "embed-report",
            inputs,
            &report,
        )?;
        st.save_text(&self.rel(variant, "embed_report.csv"), &report.to_csv())?;
        let enc = pipeline::encode(&model, &ds)?;
        let enc_inputs = vec![input_hash(self.out(), &emb)?];
        st.save(
            &self.rel(variant, "encoded.json"),
            "encoded",
            enc_inputs,
            enc,
        )?;
        st.finish()
    }

    pub fn train_field(&self, variant: Variant) -> Result<Outcome> {
        let mut st = self.stage(Command::TrainField, variant.label());
        let enc: Artifact<EncodedDataset> = st.load(&self.rel(variant, "encoded.json"))?;
        let fcfg = self.cfg.field_config();
        fcfg.validate()?;
        if self.dry_run {
            return st.finish();
        }
        let run = pipeline::train_field_stage(&enc.body, &fcfg, !self.unfiltered)?;
        let report: &FieldTrainingReport = &run.report;
        let inputs = st.inputs.clone();
        let meta = serde_json::to_value(&fcfg)?;
        let out = FieldOutput {
            checkpoint: FieldCheckpoint::new(&run.model, fcfg.seed, meta),
            filter: run.filter.clone(),
        };
        st.save(
            &self.rel(variant, "field.json"),
            "field",
            inputs.clone(),
            out,
        )?;
        st.save(
            &self.rel(variant, "field_report.json"),
            "field-report",
            inputs,
            report,
        )?;
        st.save_text(&self.rel(variant, "field_report.csv"), &report.to_csv())?;
        st.finish()
    }

    fn load_field(
        &self,
        st: &mut Stage,
        variant: Variant,
    ) -> Result<(crate::field::FieldModel, EncodedDataset)> {
        let f: Artifact<FieldOutput> = st.load(&self.rel(variant, "field.json"))?;
        let enc: Artifact<EncodedDataset> = st.load(&self.rel(variant, "encoded.json"))?;
        Ok((f.body.checkpoint.to_model()?, enc.body))
    }

    fn load_embedding(
        &self,
        st: &mut Stage,
        variant: Variant,
    ) -> Result<crate::embed::EmbeddingModel> {
        let e: Artifact<EmbedOutput> = st.load(&self.rel(variant, "embedding.json"))?;
        e.body.checkpoint.to_model()
    }

    pub fn analyze_equilibria(&self, variant: Variant) -> Result<Outcome> {
        let mut st = self.stage(Command::AnalyzeEquilibria, variant.label());
        let (field, enc) = self.load_field(&mut st, variant)?;
        let embedding = self.load_embedding(&mut st, variant)?;
        st.input(&dataset_manifest())?;
        if self.dry_run {
            return st.finish();
        }
        let ds = read_dataset(&self.path(DATASET_DIR))?;
        let search = pipeline::analyze_equilibria(&self.cfg, &field, &enc)?;
        let ground_truth = search
            .equilibria
            .iter()
            .map(|e| {
                pipeline::nearest_ground_truth(&self.cfg, &ds.lift, &embedding.decode(&e.v_eq)?)
            })
            .collect::<Result<Vec<_>>>()?;
        for e in &search.equilibria {
            log::info!(
                "equilibrium {:?} stable {} frequencies {:?}",
                e.v_eq,
                e.stable,
                e.frequencies
            );
        }
        let inputs = st.inputs.clone();
        st.save(
            &self.rel(variant, "equilibria.json"),
            "equilibria",
            inputs,
            EquilibriaOutput {
                search,
                ground_truth,
            },
        )?;
        st.finish()
    }

    /// Primary stable equilibrium, else the lowest-residual root.
    fn reference_equilibrium(&self, st: &mut Stage, variant: Variant) -> Result<Vec<f64>> {
        let eq: Artifact<EquilibriaOutput> = st.load(&self.rel(variant, "equilibria.json"))?;
        let s = &eq.body.search;
        s.primary_stable()
            .or_else(|| {
                s.equilibria
                    .iter()
                    .min_by(|a, b| a.residual.total_cmp(&b.residual))
            })
            .map(|e| e.v_eq.clone())
            .ok_or_else(|| Error::Degenerate("no equilibrium was found".into()))
    }

    pub fn analyze_cycles(&self, variant: Variant) -> Result<Outcome> {
        let mut st = self.stage(Command::AnalyzeCycles, variant.label());
        let (field, enc) = self.load_field(&mut st, variant)?;
        if self.dry_run {
            return st.finish();
        }
        let cycles: Vec<LimitCycleReport> = pipeline::analyze_cycles(&self.cfg, &field, &enc)?;
        let inputs = st.inputs.clone();
        st.save(&self.rel(variant, "cycles.json"), "cycles", inputs, cycles)?;
        st.finish()
    }

    pub fn analyze_chaos(&self, variant: Variant) -> Result<Outcome> {
        let mut st = self.stage(Command::AnalyzeChaos, variant.label());
        let embedding = self.load_embedding(&mut st, variant)?;
        let enc: Artifact<EncodedDataset> = st.load(&self.rel(variant, "encoded.json"))?;
        let v_eq = self.reference_equilibrium(&mut st, variant)?;
        st.input(&dataset_manifest())?;
        if self.dry_run {
            return st.finish();
        }
        let ds = read_dataset(&self.path(DATASET_DIR))?;
        let set = pipeline::chaos_set(&self.cfg, &ds.lift)?;
        let out: ChaosOutcome = pipeline::analyze_chaos(
            &self.cfg,
            &embedding,
            &set,
            &v_eq,
            &pipeline::test_ranges(&enc.body),
        )?;
        let mut csv = String::from("index,energy,coverage_rate,class\n");
        for (i, (r, c)) in out
            .report
            .coverage_rates
            .iter()
            .zip(&out.report.classes)
            .enumerate()
        {
            let e = out.energies[i].map_or(String::new(), |e| e.to_string());
            csv.push_str(&format!(
                "{i},{e},{r},{}\n",
                serde_json::to_value(c)?.as_str().unwrap_or("")
            ));
        }
        let inputs = st.inputs.clone();
        st.save(&self.rel(variant, "chaos.json"), "chaos", inputs, out)?;
        st.save_text(&self.rel(variant, "chaos.csv"), &csv)?;
        st.finish()
    }

    pub fn synthesize(&self, variant: Variant) -> Result<Outcome> {
        let mut st = self.stage(Command::Synthesize, variant.label());
        let (field, enc) = self.load_field(&mut st, variant)?;
        let v_eq = self.reference_equilibrium(&mut st, variant)?;
        if self.dry_run {
            return st.finish();
        }
        let runs = pipeline::analyze_synthesis(&self.cfg, &field, &v_eq, &enc)?;
        let mut csv = String::from("gamma,step,mean_distance\n");
        for r in &runs {
            for (k, m) in r.mean_distance.iter().enumerate() {
                csv.push_str(&format!("{},{k},{m}\n", r.gamma));
            }
        }
        let inputs = st.inputs.clone();
        st.save(
            &self.rel(variant, "synthesis.json"),
            "synthesis",
            inputs,
            runs,
        )?;
        st.save_text(&self.rel(variant, "synthesis.csv"), &csv)?;
        st.finish()
    }

    /// Baseline embedding and field on the shared dataset.
    pub fn baseline(&self) -> Result<Vec<Outcome>> {
        let mut out = vec![self.train_embed(Variant::Baseline)?];
        if self.dry_run {
            return Ok(out);
        }
        out.push(self.train_field(Variant::Baseline)?);
        let mut st = self.stage(Command::Baseline, Variant::Baseline.label());
        st.input(&dataset_manifest())?;
        for p in out.iter().flat_map(|o| &o.outputs) {
            st.outputs.push(input_hash(self.out(), p)?);
        }
        out.push(st.finish()?);
        Ok(out)
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Dimension { .. }
        | Error::Format { .. }
        | Error::MissingArtifact(_) => 2,
        Error::Provenance(_) | Error::StaleCache(_) => 4,
        _ => 3,
    }
}
