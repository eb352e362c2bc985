//! On-disk formats: trajectory and sequence tables, dataset manifests,
//! checkpoints and JSON reports. Every write goes to a temporary file that is
//! renamed into place.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lift::{
    Dataset, DatasetConfig, FeatureMap, LatentSeries, LiftParams, Provenance, Sequence, Split,
};
use crate::nn::{fingerprint, LayerSpec, Mlp};
use crate::systems::{System, Trajectory};
use crate::FORMAT_VERSION;

/// Write `bytes` to `path` through a sibling temporary file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::format(path, e.to_string()))
}

/// Header record of a trajectory or sequence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub format_version: u32,
    pub system: System,
    pub dt: f64,
    pub t0: f64,
    pub n_steps: usize,
    pub seed: Option<u64>,
    pub state_dim: usize,
    /// Observation columns follow the state columns when non-zero.
    pub observation_dim: usize,
    pub lift_seed: Option<u64>,
}

fn render_table(header: &TableHeader, rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "# {}", serde_json::to_string(header)?).expect("write to memory");
    let mut w = csv::Writer::from_writer(out);
    let mut cols = vec!["t".to_string()];
    cols.extend((0..header.state_dim).map(|i| format!("s{i}")));
    cols.extend((0..header.observation_dim).map(|i| format!("o{i}")));
    w.write_record(&cols)
        .map_err(|e| Error::Config(e.to_string()))?;
    for r in rows {
        // `Display` for f64 prints the shortest string that round-trips.
        w.write_record(r.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

fn parse_table(path: &Path) -> Result<(TableHeader, Vec<Vec<f64>>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::format(path, "missing header record"))?;
    let header: TableHeader =
        serde_json::from_str(json.trim()).map_err(|e| Error::format(path, e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "format version {} (expected {FORMAT_VERSION})",
                header.format_version
            ),
        ));
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let width = 1 + header.state_dim + header.observation_dim;
    let mut rows = Vec::with_capacity(header.n_steps);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if rec.len() != width {
            return Err(Error::format(
                path,
                format!("row has {} columns, expected {width}", rec.len()),
            ));
        }
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::format(path, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.len() != header.n_steps {
        return Err(Error::format(
            path,
            format!("{} rows but header says {}", rows.len(), header.n_steps),
        ));
    }
    Ok((header, rows))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let header = TableHeader {
        format_version: FORMAT_VERSION,
        system: traj.system,
        dt: traj.dt,
        t0: traj.t0,
        n_steps: traj.len(),
        seed: traj.seed,
        state_dim: traj.system.state_dim(),
        observation_dim: 0,
        lift_seed: None,
    };
    let rows = traj.states.iter().enumerate().map(|(i, s)| {
        let mut r = vec![traj.time(i)];
        r.extend_from_slice(s);
        r
    });
    atomic_write(path, &render_table(&header, rows)?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let (h, rows) = parse_table(path)?;
    Ok(Trajectory {
        system: h.system,
        dt: h.dt,
        t0: h.t0,
        seed: h.seed,
        states: rows
            .into_iter()
            .map(|r| r[1..1 + h.state_dim].to_vec())
            .collect(),
    })
}

pub fn write_sequence(path: &Path, seq: &Sequence) -> Result<()> {
    let traj = &seq.trajectory;
    let obs_dim = seq.latent.observations.first().map_or(0, |o| o.len());
    let header = TableHeader {
        format_version: FORMAT_VERSION,
        system: traj.system,
        dt: traj.dt,
        t0: traj.t0,
        n_steps: traj.len(),
        seed: traj.seed,
        state_dim: traj.system.state_dim(),
        observation_dim: obs_dim,
        lift_seed: Some(seq.latent.provenance.lift_seed),
    };
    let rows = traj
        .states
        .iter()
        .zip(&seq.latent.observations)
        .enumerate()
        .map(|(i, (s, o))| {
            let mut r = vec![traj.time(i)];
            r.extend_from_slice(s);
            r.extend_from_slice(o);
            r
        });
    atomic_write(path, &render_table(&header, rows)?)
}

pub fn read_sequence(path: &Path) -> Result<Sequence> {
    let (h, rows) = parse_table(path)?;
    let sd = h.state_dim;
    let trajectory = Trajectory {
        system: h.system,
        dt: h.dt,
        t0: h.t0,
        seed: h.seed,
        states: rows.iter().map(|r| r[1..1 + sd].to_vec()).collect(),
    };
    let latent = LatentSeries {
        observations: rows.iter().map(|r| r[1 + sd..].to_vec()).collect(),
        dt: h.dt,
        provenance: Provenance {
            system: h.system.name().to_string(),
            lift_seed: h.lift_seed.unwrap_or_default(),
            trajectory_seed: h.seed,
        },
    };
    Ok(Sequence { trajectory, latent })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Dataset manifest; file names are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub system: System,
    pub seed: u64,
    pub lift_seed: u64,
    pub lift: LiftParams,
    pub features: FeatureMap,
    pub config: DatasetConfig,
    pub splits: SplitFiles,
    /// `(file, sha256)` for every sequence file.
    pub hashes: Vec<(String, String)>,
}

pub const DATASET_MANIFEST: &str = "manifest.json";

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<DatasetManifest> {
    let mut hashes = Vec::new();
    let mut files = |split: Split| -> Result<Vec<String>> {
        ds.split(split)
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let rel = format!("{}/{i:04}.csv", split.name());
                let p = dir.join(&rel);
                write_sequence(&p, s)?;
                hashes.push((rel.clone(), sha256_file(&p)?));
                Ok(rel)
            })
            .collect()
    };
    let splits = SplitFiles {
        train: files(Split::Train)?,
        val: files(Split::Val)?,
        test: files(Split::Test)?,
    };
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        system: ds.system,
        seed: ds.seed,
        lift_seed: ds.lift.seed,
        lift: ds.lift.clone(),
        features: ds.features.clone(),
        config: ds.config.clone(),
        splits,
        hashes,
    };
    write_json(&dir.join(DATASET_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Load a dataset, verifying every sequence file against the manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m: DatasetManifest = read_json(&dir.join(DATASET_MANIFEST))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(
            dir,
            format!("dataset format version {}", m.format_version),
        ));
    }
    for (rel, want) in &m.hashes {
        let got = sha256_file(&dir.join(rel))?;
        if &got != want {
            return Err(Error::Provenance(format!(
                "{rel}: manifest hash {want}, file hash {got}"
            )));
        }
    }
    let load = |names: &[String]| -> Result<Vec<Sequence>> {
        names.iter().map(|n| read_sequence(&dir.join(n))).collect()
    };
    Ok(Dataset {
        system: m.system,
        lift: m.lift.clone(),
        features: m.features.clone(),
        config: m.config.clone(),
        seed: m.seed,
        train: load(&m.splits.train)?,
        val: load(&m.splits.val)?,
        test: load(&m.splits.test)?,
    })
}

/// Single-network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Vec<LayerSpec>,
    pub fingerprint: String,
    /// Flat row-major parameters, layer by layer (weights then bias).
    pub params: Vec<f64>,
    pub seed: u64,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_mlp(mlp: &Mlp, seed: u64, metadata: serde_json::Value) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            architecture: mlp.specs().to_vec(),
            fingerprint: mlp.fingerprint(),
            params: mlp.flat_params().to_vec(),
            seed,
            metadata,
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format version {}",
                self.format_version
            )));
        }
        if fingerprint(&self.architecture) != self.fingerprint {
            return Err(Error::Provenance(format!(
                "checkpoint fingerprint {} does not match its architecture {}",
                self.fingerprint,
                fingerprint(&self.architecture)
            )));
        }
        Mlp::from_flat(&self.architecture, self.params.clone())
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_json(path, ck)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_json(path)
}

/// Artifact wrapper recording the hashes of the inputs it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub format_version: u32,
    pub kind: String,
    pub label: String,
    pub inputs: Vec<(String, String)>,
    pub body: T,
}

impl<T> Artifact<T> {
    pub fn new(kind: &str, label: &str, inputs: Vec<(String, String)>, body: T) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: kind.into(),
            label: label.into(),
            inputs,
            body,
        }
    }
}

/// Load an artifact and check that each recorded input still has its hash.
pub fn read_artifact<T: DeserializeOwned>(path: &Path, base: &Path) -> Result<Artifact<T>> {
    let a: Artifact<T> = read_json(path)?;
    if a.format_version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("artifact format version {}", a.format_version),
        ));
    }
    for (rel, want) in &a.inputs {
        let got = sha256_file(&base.join(rel))?;
        if &got != want {
            return Err(Error::Provenance(format!(
                "{} was built from {rel} with hash {want}, which now hashes to {got}",
                path.display()
            )));
        }
    }
    Ok(a)
}

/// `(relative path, hash)` for an existing file.
pub fn input_hash(base: &Path, rel: &str) -> Result<(String, String)> {
    Ok((rel.to_string(), sha256_file(&base.join(rel))?))
}

pub fn path_in(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

/// Embedding checkpoint: both networks in the single-network format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedCheckpoint {
    pub encoder: Checkpoint,
    pub decoder: Checkpoint,
    pub standardization: crate::embed::Standardization,
    pub d: usize,
    pub config_fingerprint: String,
}

impl EmbedCheckpoint {
    pub fn new(
        model: &crate::embed::EmbeddingModel,
        seed: u64,
        metadata: serde_json::Value,
    ) -> Self {
        Self {
            encoder: Checkpoint::from_mlp(&model.encoder, seed, metadata.clone()),
            decoder: Checkpoint::from_mlp(&model.decoder, seed, metadata),
            standardization: model.standardization.clone(),
            d: model.d,
            config_fingerprint: model.config_fingerprint.clone(),
        }
    }

    pub fn to_model(&self) -> Result<crate::embed::EmbeddingModel> {
        let encoder = self.encoder.to_mlp()?;
        let decoder = self.decoder.to_mlp()?;
        crate::error::check_len("encoder output", self.d, encoder.output_dim())?;
        crate::error::check_len("decoder input", self.d, decoder.input_dim())?;
        Ok(crate::embed::EmbeddingModel {
            encoder,
            decoder,
            standardization: self.standardization.clone(),
            d: self.d,
            config_fingerprint: self.config_fingerprint.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCheckpoint {
    pub net: Checkpoint,
    pub d: usize,
    pub config_fingerprint: String,
}

impl FieldCheckpoint {
    pub fn new(model: &crate::field::FieldModel, seed: u64, metadata: serde_json::Value) -> Self {
        Self {
            net: Checkpoint::from_mlp(&model.mlp, seed, metadata),
            d: model.d,
            config_fingerprint: model.config_fingerprint.clone(),
        }
    }

    pub fn to_model(&self) -> Result<crate::field::FieldModel> {
        let mlp = self.net.to_mlp()?;
        crate::error::check_len("field input", self.d, mlp.input_dim())?;
        crate::error::check_len("field output", self.d, mlp.output_dim())?;
        Ok(crate::field::FieldModel {
            mlp,
            d: self.d,
            config_fingerprint: self.config_fingerprint.clone(),
        })
    }
}
