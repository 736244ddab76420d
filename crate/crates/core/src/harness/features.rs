use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, reset_dir, write_json, write_text};
use crate::datagen::Split;
use crate::encoder::{FeatureSource, FeatureTable};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::losses::LossKind;
use crate::numerics::Matrix;

pub const FEATURES_MANIFEST: &str = "features_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub bag_id: u64,
    pub split: Split,
    pub bag_label: Label,
    pub n_instances: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub loss_kind: LossKind,
    pub source: FeatureSource,
    pub feature_dim: usize,
    pub bags: Vec<FeatureEntry>,
}

fn feature_csv(m: &Matrix) -> String {
    let mut out = String::from("instance_idx");
    for j in 0..m.cols() {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for (i, row) in m.iter_rows().enumerate() {
        write!(out, "{i}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn parse_feature_csv(text: &str, k: usize) -> std::result::Result<Matrix, String> {
    let mut lines = text.lines();
    lines.next().ok_or("empty file")?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (ln, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let idx: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or(format!("line {}: bad instance index", ln + 2))?;
        if idx != rows {
            return Err(format!(
                "line {}: instance index {idx} out of order",
                ln + 2
            ));
        }
        let before = values.len();
        for f in fields {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| format!("line {}: bad value {f:?}", ln + 2))?,
            );
        }
        if values.len() - before != k {
            return Err(format!("line {}: expected {k} features", ln + 2));
        }
        rows += 1;
    }
    Matrix::new(rows, k, values).map_err(|e| e.to_string())
}

/// Replaces `dir` with one CSV per bag plus a manifest; returns the manifest.
pub fn save_features(
    tables: &[FeatureTable],
    loss_kind: LossKind,
    source: FeatureSource,
    dir: &Path,
) -> Result<FeatureManifest> {
    reset_dir(dir)?;
    let feature_dim = tables.first().map_or(0, |t| t.features.cols());
    let mut bags = Vec::with_capacity(tables.len());
    for t in tables {
        let file = format!("features_{}.csv", t.bag_id);
        write_text(&dir.join(&file), &feature_csv(&t.features))?;
        bags.push(FeatureEntry {
            bag_id: t.bag_id,
            split: t.split,
            bag_label: t.bag_label,
            n_instances: t.features.rows(),
            file,
        });
    }
    let manifest = FeatureManifest {
        loss_kind,
        source,
        feature_dim,
        bags,
    };
    write_json(&dir.join(FEATURES_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Reads every bag listed in the manifest of `dir`.
pub fn load_features(dir: &Path) -> Result<(FeatureManifest, Vec<FeatureTable>)> {
    let mpath = dir.join(FEATURES_MANIFEST);
    if !mpath.exists() {
        return Err(Error::MissingFeatures(format!(
            "{} not found (run extract first)",
            mpath.display()
        )));
    }
    let manifest: FeatureManifest = read_json(&mpath)?;
    let mut tables = Vec::with_capacity(manifest.bags.len());
    for entry in &manifest.bags {
        let path = dir.join(&entry.file);
        let text = fs::read_to_string(&path).map_err(|_| {
            Error::MissingFeatures(format!("bag {} ({})", entry.bag_id, path.display()))
        })?;
        let features =
            parse_feature_csv(&text, manifest.feature_dim).map_err(|message| Error::Format {
                path: path.clone(),
                message,
            })?;
        if features.rows() != entry.n_instances {
            return Err(Error::Format {
                path,
                message: format!(
                    "{} rows, manifest says {}",
                    features.rows(),
                    entry.n_instances
                ),
            });
        }
        tables.push(FeatureTable {
            split: entry.split,
            bag_id: entry.bag_id,
            bag_label: entry.bag_label,
            features,
        });
    }
    Ok((manifest, tables))
}
