//! `manifest.json`: everything needed to rerun a command exactly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use laplora::datasets::SyntheticSpec;
use laplora::diagnostics::LayerChoice;
use laplora::{GraphDataset, ModelConfig, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::{commands, sweep, ReplayArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub data: PathBuf,
    pub eigen: Option<PathBuf>,
    pub depths: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Depth and seed are overridden per run.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub row_normalize: bool,
    pub save_models: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosePlan {
    pub data: PathBuf,
    pub eigen: PathBuf,
    pub model: PathBuf,
    pub energy_depth: usize,
    pub max_depth: usize,
    pub layer: LayerChoice,
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Sweep(SweepPlan),
    Diagnose(DiagnosePlan),
    Gen { spec: SyntheticSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub n_nodes: usize,
    /// Hex, as in the cache error messages.
    pub graph_hash: String,
}

impl DatasetInfo {
    pub fn of(data: &GraphDataset) -> Self {
        DatasetInfo {
            name: data.name.clone(),
            n_nodes: data.n_nodes,
            graph_hash: format!("{:016x}", laplora::datasets::graph_hash(data)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub dataset: DatasetInfo,
    pub seeds: Vec<u64>,
    pub jobs: Option<usize>,
    pub wall_clock_secs: f64,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(invocation: Invocation, dataset: DatasetInfo) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            dataset,
            seeds: Vec::new(),
            jobs: None,
            wall_clock_secs: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(self)?;
        fs::write(&path, body + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Absolute form of an input path, so a manifest stays valid from any
/// working directory.
pub fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))
}

pub fn replay(args: &ReplayArgs) -> Result<()> {
    let manifest = Manifest::read(&args.manifest)?;
    match &manifest.invocation {
        Invocation::Sweep(plan) => sweep::run(plan, &args.out, args.jobs),
        Invocation::Diagnose(plan) => commands::run_diagnose(plan, &args.out),
        Invocation::Gen { spec } => commands::run_gen(spec, &args.out),
    }
}
