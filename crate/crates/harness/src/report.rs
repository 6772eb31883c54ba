//! On-disk products of an experiment: JSON report, CSV histories, bases and
//! sample sets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use pmor::hyper::EcswSampleSet;
use pmor::rom::{PodCriterion, ReducedBasis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, HarnessResult};
use crate::pipeline::{NamedBasis, NamedSample, PipelineState, RunRecord};
use crate::snapio::{encode_snapshots, read_snapshots, write_snapshots};

/// Git-style content hash: SHA-256 of `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    pub label: String,
    pub reduced_dim: usize,
    pub energy_captured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub label: String,
    pub size: usize,
    pub achieved_residual: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    /// Hash of the configuration text, which includes the seed.
    pub provenance: String,
    pub qois: Vec<String>,
    pub bases: Vec<BasisSummary>,
    pub samples: Vec<SampleSummary>,
    pub runs: Vec<RunRecord>,
    /// Run label to QoI label to relative error in percent.
    pub errors: BTreeMap<String, BTreeMap<String, f64>>,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn new(config: &ExperimentConfig, qois: Vec<String>, state: &PipelineState) -> Self {
        let runs = state.hdm.iter().chain(&state.roms).chain(&state.hproms).cloned().collect();
        Self {
            name: config.name.clone(),
            provenance: content_hash(config.to_toml_string().as_bytes()),
            qois,
            bases: state
                .bases
                .iter()
                .map(|b| BasisSummary {
                    label: b.label.clone(),
                    reduced_dim: b.basis.dim(),
                    energy_captured: b.basis.energy_fraction(b.basis.dim()),
                })
                .collect(),
            samples: state
                .samples
                .iter()
                .map(|s| SampleSummary {
                    label: s.label.clone(),
                    size: s.sample.len(),
                    achieved_residual: s.sample.achieved_residual,
                    epsilon: s.sample.epsilon,
                })
                .collect(),
            runs,
            errors: state.errors.clone(),
            config: config.clone(),
        }
    }

    pub fn run(&self, label: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.label == label)
    }

    pub fn error(&self, run: &str, qoi: &str) -> Option<f64> {
        self.errors.get(run).and_then(|m| m.get(qoi)).copied()
    }
}

/// `t,value` lines; `f64` display is the shortest exact round-trip form.
pub fn history_csv(times: &[f64], values: &[f64]) -> String {
    let mut s = String::from("t,value\n");
    for (t, v) in times.iter().zip(values) {
        let _ = writeln!(s, "{},{}", number(*t), number(*v));
    }
    s
}

/// Shortest round-trip text, switching to exponent form for very large or small magnitudes.
fn number(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFile {
    pub label: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: Vec<f64>,
    /// Column-major `V`.
    pub v: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub criterion: PodCriterion,
    pub block_scales: Vec<f64>,
    pub snapshot_hash: Option<String>,
}

impl BasisFile {
    pub fn from_basis(nb: &NamedBasis, snapshot_hash: Option<String>) -> Self {
        let b = &nb.basis;
        Self {
            label: nb.label.clone(),
            rows: b.v.nrows(),
            cols: b.v.ncols(),
            offset: b.offset.as_slice().to_vec(),
            v: b.v.as_slice().to_vec(),
            singular_values: b.singular_values.clone(),
            criterion: b.criterion,
            block_scales: b.block_scales.clone(),
            snapshot_hash,
        }
    }

    pub fn into_basis(self) -> HarnessResult<NamedBasis> {
        if self.v.len() != self.rows * self.cols || self.offset.len() != self.rows {
            return Err(HarnessError::Format(format!("basis '{}' has inconsistent sizes", self.label)));
        }
        let mut basis = ReducedBasis::new(
            DVector::from_vec(self.offset),
            DMatrix::from_vec(self.rows, self.cols, self.v),
        )?;
        basis.singular_values = self.singular_values;
        basis.criterion = self.criterion;
        basis.block_scales = self.block_scales;
        Ok(NamedBasis { label: self.label, basis })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFile {
    pub label: String,
    pub strategy: String,
    pub basis: String,
    pub basis_hash: String,
    pub sample: EcswSampleSet,
}

fn basis_hash(nb: &NamedBasis) -> String {
    let bytes: Vec<u8> = nb.basis.v.iter().chain(nb.basis.offset.iter()).flat_map(|x| x.to_le_bytes()).collect();
    content_hash(&bytes)
}

/// Layout of an output directory.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> HarnessResult<Self> {
        let root = root.into();
        for sub in ["", "csv", "bases", "samples", "runs"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| HarnessError::io(&p, e))?;
        }
        Ok(Self { root })
    }

    pub fn snapshots_path(&self) -> PathBuf {
        self.root.join("snapshots.bin")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    fn write(&self, path: &Path, text: &str) -> HarnessResult<()> {
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> HarnessResult<T> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn json_files(&self, sub: &str) -> HarnessResult<Vec<PathBuf>> {
        let dir = self.root.join(sub);
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| HarnessError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        Ok(files)
    }

    pub fn write_histories(&self, run: &RunRecord) -> HarnessResult<()> {
        for (q, values) in &run.histories {
            let path = self.root.join("csv").join(format!("{}_{q}.csv", run.label));
            self.write(&path, &history_csv(&run.times, values))?;
        }
        Ok(())
    }

    /// Persists every artifact currently held by `state`.
    pub fn save_state(&self, state: &PipelineState, artifacts: bool) -> HarnessResult<()> {
        let snapshot_hash = state.snapshots.as_ref().map(|s| content_hash(&encode_snapshots(s)));
        if artifacts {
            if let Some(s) = &state.snapshots {
                write_snapshots(&self.snapshots_path(), s)?;
            }
            for nb in &state.bases {
                let file = BasisFile::from_basis(nb, snapshot_hash.clone());
                self.write(&self.root.join("bases").join(format!("{}.json", nb.label)), &serde_json::to_string(&file)?)?;
            }
            for ns in &state.samples {
                let nb = state.bases.iter().find(|b| b.label == ns.basis);
                let file = SampleFile {
                    label: ns.label.clone(),
                    strategy: ns.strategy.clone(),
                    basis: ns.basis.clone(),
                    basis_hash: nb.map(basis_hash).unwrap_or_default(),
                    sample: ns.sample.clone(),
                };
                self.write(
                    &self.root.join("samples").join(format!("{}.json", ns.label)),
                    &serde_json::to_string_pretty(&file)?,
                )?;
            }
        }
        for run in state.hdm.iter().chain(&state.roms).chain(&state.hproms) {
            self.write(&self.root.join("runs").join(format!("{}.json", run.label)), &serde_json::to_string(run)?)?;
        }
        Ok(())
    }

    /// Loads whatever artifacts exist into `state`, leaving present fields alone.
    pub fn load_state(&self, state: &mut PipelineState) -> HarnessResult<()> {
        if state.snapshots.is_none() && self.snapshots_path().exists() {
            state.snapshots = Some(read_snapshots(&self.snapshots_path())?);
        }
        if state.bases.is_empty() {
            for p in self.json_files("bases")? {
                state.bases.push(Self::read_json::<BasisFile>(&p)?.into_basis()?);
            }
        }
        if state.samples.is_empty() {
            for p in self.json_files("samples")? {
                let f: SampleFile = Self::read_json(&p)?;
                if let Some(nb) = state.bases.iter().find(|b| b.label == f.basis) {
                    if basis_hash(nb) != f.basis_hash {
                        return Err(HarnessError::Pipeline(format!(
                            "sample {} was trained on a different basis '{}'",
                            f.label, f.basis
                        )));
                    }
                }
                state.samples.push(NamedSample { label: f.label, strategy: f.strategy, basis: f.basis, sample: f.sample });
            }
        }
        let have_runs = state.hdm.is_some() || !state.roms.is_empty() || !state.hproms.is_empty();
        if !have_runs {
            for p in self.json_files("runs")? {
                let run: RunRecord = Self::read_json(&p)?;
                match run.kind {
                    crate::pipeline::RunKind::Hdm => state.hdm = Some(run),
                    crate::pipeline::RunKind::Prom => state.roms.push(run),
                    crate::pipeline::RunKind::Hprom => state.hproms.push(run),
                }
            }
        }
        Ok(())
    }

    /// Writes CSV histories and `report.json`.
    pub fn write_report(&self, report: &RunReport, csv: bool) -> HarnessResult<()> {
        if csv {
            for run in &report.runs {
                self.write_histories(run)?;
            }
        }
        self.write(&self.report_path(), &serde_json::to_string_pretty(report)?)
    }
}
