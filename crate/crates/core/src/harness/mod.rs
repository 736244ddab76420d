//! Command-line pipeline: dataset generation, encoder pre-training,
//! feature extraction, MIL evaluation, PCA export and the final report.
//!
//! Every command reads and writes a single output directory:
//!
//! ```text
//! <out>/config.json            resolved configuration
//! <out>/run_manifest.json      config hash, seeds, file list
//! <out>/dataset/               bag CSVs + manifest.json
//! <out>/<variant>/checkpoint.json
//! <out>/<variant>/loss_curve.csv
//! <out>/<variant>/features/    features_<bag_id>.csv + features_manifest.json
//! <out>/<variant>/metrics.csv, mil_summary.json
//! <out>/<variant>/pca_<split>.csv, pca_stats.json
//! <out>/report.txt, report.csv
//! ```

mod commands;
mod config;
mod features;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_all, cmd_extract, cmd_generate, cmd_mil, cmd_pca, cmd_pretrain, cmd_report, MilSummary,
    PcaStats, ReportRow,
};
pub use config::{
    load_config, merge_json, parse_config, ExperimentConfig, PcaSettings, SeedPlan, DEFAULT_PRESET,
    PRESETS,
};
pub use features::{load_features, save_features, FeatureEntry, FeatureManifest};

use crate::datagen::Split;
use crate::error::{Error, Result};
use crate::losses::LossKind;

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Paths inside an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn run_manifest(&self) -> PathBuf {
        self.root.join(RUN_MANIFEST)
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn variant(&self, kind: LossKind) -> PathBuf {
        self.root.join(kind.name())
    }

    pub fn checkpoint(&self, kind: LossKind) -> PathBuf {
        self.variant(kind).join("checkpoint.json")
    }

    pub fn loss_curve(&self, kind: LossKind) -> PathBuf {
        self.variant(kind).join("loss_curve.csv")
    }

    pub fn features(&self, kind: LossKind) -> PathBuf {
        self.variant(kind).join("features")
    }

    pub fn metrics(&self, kind: LossKind) -> PathBuf {
        self.variant(kind).join("metrics.csv")
    }

    pub fn mil_summary(&self, kind: LossKind) -> PathBuf {
        self.variant(kind).join("mil_summary.json")
    }

    pub fn pca(&self, kind: LossKind, split: Split) -> PathBuf {
        self.variant(kind).join(format!("pca_{}.csv", split.name()))
    }

    pub fn pca_stats(&self, kind: LossKind) -> PathBuf {
        self.variant(kind).join("pca_stats.json")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub preset: String,
    pub seeds: SeedPlan,
    /// Every file under the output directory except this manifest, as
    /// sorted `/`-separated relative paths.
    pub files: Vec<String>,
}

fn list_files(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("walked below root");
                let parts: Vec<_> = rel.iter().map(|p| p.to_string_lossy()).collect();
                out.push(parts.join("/"));
            }
        }
    }
    out.retain(|f| f != RUN_MANIFEST);
    out.sort();
    Ok(out)
}

/// Rewrites the run manifest from the current directory contents.
pub fn write_run_manifest(config: &ExperimentConfig, layout: &Layout) -> Result<RunManifest> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        preset: config.preset.clone(),
        seeds: config.seeds(),
        files: list_files(&layout.root)?,
    };
    write_json(&layout.run_manifest(), &manifest)?;
    Ok(manifest)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &(json + "\n"))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Removes a directory if present so a command can rewrite it from scratch.
pub(crate) fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
