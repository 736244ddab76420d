use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::datagen::{Split, SyntheticMILConfig};
use crate::encoder::{FeatureSource, PretrainConfig};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::mil::MILTrainConfig;
use crate::rng::derive_seed;

pub const PRESETS: [&str; 2] = ["camelyon-like", "rvt-like"];
pub const DEFAULT_PRESET: &str = "camelyon-like";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSettings {
    /// Upper bound on points written per split.
    pub max_points: usize,
    pub splits: Vec<Split>,
}

impl Default for PcaSettings {
    fn default() -> Self {
        Self {
            max_points: 5000,
            splits: vec![Split::Train, Split::Test],
        }
    }
}

/// Everything one experiment needs. Seeds inside `dataset`, `pretrain` and
/// `mil` are overwritten with values derived from `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub dataset: SyntheticMILConfig,
    pub variants: Vec<LossKind>,
    pub pretrain: PretrainConfig,
    pub feature_source: FeatureSource,
    pub mil: MILTrainConfig,
    pub n_mil_repetitions: usize,
    pub pca: PcaSettings,
}

/// Seeds handed to each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub dataset: u64,
    /// Shared by every encoder variant so they start from the same weights.
    pub pretrain: u64,
    pub mil_runs: Vec<u64>,
    pub pca: u64,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (dataset, n_pseudo_bags) = match name {
            "camelyon-like" => (SyntheticMILConfig::camelyon_like(), 5),
            "rvt-like" => (SyntheticMILConfig::rvt_like(), 30),
            other => {
                return Err(Error::ConfigInvalid(format!(
                    "unknown preset {other:?} (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        let cfg = Self {
            preset: name.to_string(),
            master_seed: 0,
            output_dir: PathBuf::from("weaksupcon-out"),
            dataset,
            variants: vec![LossKind::Simclr, LossKind::Supcon, LossKind::Weaksupcon],
            pretrain: PretrainConfig::default(),
            feature_source: FeatureSource::Trunk,
            mil: MILTrainConfig {
                n_pseudo_bags,
                ..MILTrainConfig::default()
            },
            n_mil_repetitions: 3,
            pca: PcaSettings::default(),
        };
        Ok(cfg.resolved())
    }

    pub fn seeds(&self) -> SeedPlan {
        let m = self.master_seed;
        SeedPlan {
            master: m,
            dataset: derive_seed(m, "dataset", 0),
            pretrain: derive_seed(m, "pretrain", 0),
            mil_runs: (0..self.n_mil_repetitions as u64)
                .map(|r| derive_seed(m, "mil", r))
                .collect(),
            pca: derive_seed(m, "pca", 0),
        }
    }

    /// Copy with all stage seeds derived from `master_seed`.
    pub fn resolved(mut self) -> Self {
        let seeds = self.seeds();
        self.dataset.seed = seeds.dataset;
        self.pretrain.seed = seeds.pretrain;
        self.mil.seed = 0;
        self
    }

    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self.resolved()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ConfigInvalid(m));
        if self.variants.is_empty() {
            return fail("at least one encoder variant is required".into());
        }
        let unique: BTreeSet<&str> = self.variants.iter().map(|k| k.name()).collect();
        if unique.len() != self.variants.len() {
            return fail("encoder variants must be distinct".into());
        }
        if self.n_mil_repetitions == 0 {
            return fail("n_mil_repetitions must be >= 1".into());
        }
        if self.pca.max_points == 0 {
            return fail("pca.max_points must be >= 1".into());
        }
        self.dataset.validate()?;
        self.pretrain.validate()?;
        self.mil.validate()
    }

    /// SHA-256 of the compact, key-sorted JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let value = serde_json::to_value(&c).expect("config serializes");
        let canonical = serde_json::to_vec(&value).expect("value serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Recursively overlays `patch` on `base`; objects merge key by key and
/// everything else is replaced.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a JSON config that overrides a named preset.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let parse_err = |message: String| Error::ConfigParse {
        path: path.to_path_buf(),
        message,
    };
    let user: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    if !user.is_object() {
        return Err(parse_err("top level must be a JSON object".into()));
    }
    let preset = match user.get("preset") {
        None => DEFAULT_PRESET.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(parse_err("field `preset` must be a string".into())),
    };
    let mut merged =
        serde_json::to_value(ExperimentConfig::preset(&preset)?).expect("config serializes");
    merge_json(&mut merged, user);
    let cfg: ExperimentConfig =
        serde_json::from_value(merged).map_err(|e| parse_err(e.to_string()))?;
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::ConfigParse {
        path: path.to_path_buf(),
        message: format!("cannot read file: {e}"),
    })?;
    parse_config(&text, path)
}
