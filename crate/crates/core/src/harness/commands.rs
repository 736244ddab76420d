use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::thread;

use serde::{Deserialize, Serialize};

use super::features::{load_features, save_features};
use super::{
    read_json, reset_dir, write_json, write_run_manifest, write_text, ExperimentConfig, Layout,
};
use crate::datagen::{
    generate_dataset, load_dataset, save_dataset, DatasetManifest, Split, DATASET_MANIFEST,
};
use crate::encoder::{
    cosine_diagnostics, extract_features, pretrain, split_cosine_diagnostics, Checkpoint,
    CosineDiagnostics, FeatureSource, FeatureTable, PretrainConfig,
};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::losses::LossKind;
use crate::mil::{evaluate, mil_train, BagMetrics, FeatureScaler, MILTrainConfig, MetricsReport};
use crate::numerics::{Matrix, Pca2d};
use crate::rng::Rng;

/// Split on which MIL metrics are reported.
const EVAL_SPLIT: Split = Split::Test;

fn begin(config: &ExperimentConfig) -> Result<Layout> {
    let layout = Layout::new(&config.output_dir);
    write_json(&layout.config(), config)?;
    Ok(layout)
}

fn selected(config: &ExperimentConfig, only: Option<LossKind>) -> Vec<LossKind> {
    match only {
        Some(k) => vec![k],
        None => config.variants.clone(),
    }
}

/// Runs `f` on every item on its own thread, keeping input order.
fn parallel<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|it| s.spawn(|| f(it))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

pub fn cmd_generate(config: &ExperimentConfig) -> Result<()> {
    let layout = begin(config)?;
    let dataset = generate_dataset(&config.dataset)?;
    reset_dir(&layout.dataset())?;
    save_dataset(&dataset, &layout.dataset())?;
    write_run_manifest(config, &layout)?;
    Ok(())
}

pub fn cmd_pretrain(config: &ExperimentConfig, only: Option<LossKind>) -> Result<()> {
    let layout = begin(config)?;
    let dataset = load_dataset(&layout.dataset())?;
    let kinds = selected(config, only);
    let trained = parallel(&kinds, |&kind| {
        let cfg = PretrainConfig {
            loss_kind: kind,
            ..config.pretrain.clone()
        };
        pretrain(&dataset, &cfg)
    })?;
    for (&kind, (model, log)) in kinds.iter().zip(trained) {
        Checkpoint::new(model, kind, config.pretrain.seed).save(&layout.checkpoint(kind))?;
        let mut csv = String::from("step,loss_kind,value\n");
        for (step, v) in log.step_losses.iter().enumerate() {
            writeln!(csv, "{step},{},{v}", kind.tag()).unwrap();
        }
        write_text(&layout.loss_curve(kind), &csv)?;
    }
    write_run_manifest(config, &layout)?;
    Ok(())
}

pub fn cmd_extract(config: &ExperimentConfig, only: Option<LossKind>) -> Result<()> {
    let layout = begin(config)?;
    let dataset = load_dataset(&layout.dataset())?;
    for kind in selected(config, only) {
        let ck = Checkpoint::load(&layout.checkpoint(kind))?;
        let tables = extract_features(&ck.model, &dataset, config.feature_source)?;
        save_features(&tables, kind, config.feature_source, &layout.features(kind))?;
    }
    write_run_manifest(config, &layout)?;
    Ok(())
}

/// Per-encoder MIL results on the evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilSummary {
    pub encoder: String,
    pub loss_kind: LossKind,
    pub split: Split,
    pub n_runs: usize,
    pub run_seeds: Vec<u64>,
    pub runs: Vec<BagMetrics>,
    pub mean: BagMetrics,
    /// Population standard deviation over runs.
    pub std: BagMetrics,
}

fn bags_of(tables: &[FeatureTable], split: Split) -> (Vec<Matrix>, Vec<Label>) {
    tables
        .iter()
        .filter(|t| t.split == split)
        .map(|t| (t.features.clone(), t.bag_label))
        .unzip()
}

/// Fails unless every bag of the dataset has features.
fn check_coverage(tables: &[FeatureTable], dataset: &DatasetManifest) -> Result<()> {
    let have: BTreeMap<u64, usize> = tables
        .iter()
        .map(|t| (t.bag_id, t.features.rows()))
        .collect();
    let missing: Vec<String> = dataset
        .bags
        .iter()
        .filter(|b| have.get(&b.bag_id) != Some(&b.n_instances))
        .map(|b| b.bag_id.to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingFeatures(format!(
            "no matching features for bag(s) {}",
            missing.join(", ")
        )))
    }
}

fn run_mil(
    config: &ExperimentConfig,
    tables: &[FeatureTable],
    kind: LossKind,
) -> Result<(MilSummary, String)> {
    let (mut train, train_labels) = bags_of(tables, Split::Train);
    let (mut eval, eval_labels) = bags_of(tables, EVAL_SPLIT);
    if eval.is_empty() {
        return Err(Error::SingleClass);
    }
    if config.mil.standardize {
        let scaler = FeatureScaler::fit(&train)?;
        train.iter_mut().for_each(|b| *b = scaler.transform(b));
        eval.iter_mut().for_each(|b| *b = scaler.transform(b));
    }
    let seeds = config.seeds().mil_runs;
    let runs = parallel(&seeds, |&seed| {
        let cfg = MILTrainConfig {
            seed,
            ..config.mil.clone()
        };
        let trained = mil_train(&train, &train_labels, &cfg)?;
        evaluate(&trained.model, &eval, &eval_labels)
    })?;
    let report = MetricsReport::from_runs(runs)?;

    let mut csv = String::from("encoder,loss_kind,run_seed,split,balanced_acc,accuracy,auc\n");
    let mut row = |seed: &str, m: &BagMetrics| {
        writeln!(
            csv,
            "{},{},{seed},{},{},{},{}",
            kind.name(),
            kind.tag(),
            EVAL_SPLIT.name(),
            m.balanced_accuracy,
            m.accuracy,
            m.auc
        )
        .unwrap();
    };
    for (seed, m) in seeds.iter().zip(&report.runs) {
        row(&seed.to_string(), m);
    }
    row("mean", &report.mean);

    let summary = MilSummary {
        encoder: kind.name().to_string(),
        loss_kind: kind,
        split: EVAL_SPLIT,
        n_runs: report.n_runs,
        run_seeds: seeds,
        runs: report.runs,
        mean: report.mean,
        std: report.std,
    };
    Ok((summary, csv))
}

pub fn cmd_mil(config: &ExperimentConfig, only: Option<LossKind>) -> Result<Vec<MilSummary>> {
    let layout = begin(config)?;
    let dataset: DatasetManifest = read_json(&layout.dataset().join(DATASET_MANIFEST))?;
    let mut out = Vec::new();
    for kind in selected(config, only) {
        let (_, tables) = load_features(&layout.features(kind))?;
        check_coverage(&tables, &dataset)?;
        let (summary, csv) = run_mil(config, &tables, kind)?;
        write_text(&layout.metrics(kind), &csv)?;
        write_json(&layout.mil_summary(kind), &summary)?;
        out.push(summary);
    }
    write_run_manifest(config, &layout)?;
    Ok(out)
}

/// PCA fit details plus cosine statistics of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaStats {
    pub loss_kind: LossKind,
    pub source: FeatureSource,
    pub fit_split: Split,
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
    /// Points written per split after down-sampling.
    pub points: BTreeMap<Split, usize>,
    /// Cosine statistics of the extracted training features.
    pub cosine: CosineDiagnostics,
    /// The same statistics on projection-head outputs.
    pub cosine_projection: CosineDiagnostics,
}

pub fn cmd_pca(
    config: &ExperimentConfig,
    only: Option<LossKind>,
    splits: Option<&[Split]>,
) -> Result<Vec<PcaStats>> {
    let layout = begin(config)?;
    let dataset = load_dataset(&layout.dataset())?;
    let truth: BTreeMap<u64, &[Label]> = dataset
        .bags()
        .map(|(_, b)| (b.bag_id, b.true_instance_labels.as_slice()))
        .collect();
    let splits = splits.unwrap_or(&config.pca.splits);
    let mut out = Vec::new();
    for kind in selected(config, only) {
        let (manifest, tables) = load_features(&layout.features(kind))?;
        let rows_of = |split: Split| -> Result<Vec<(&[f64], Label, Label)>> {
            let mut rows = Vec::new();
            for t in tables.iter().filter(|t| t.split == split) {
                let labels = truth.get(&t.bag_id).ok_or_else(|| {
                    Error::MissingFeatures(format!("bag {} is not in the dataset", t.bag_id))
                })?;
                for (r, &l) in t.features.iter_rows().zip(labels.iter()) {
                    rows.push((r, t.bag_label, l));
                }
            }
            Ok(rows)
        };

        let train_rows = rows_of(Split::Train)?;
        let train = Matrix::from_rows(&train_rows.iter().map(|r| r.0).collect::<Vec<_>>())?;
        let pca = Pca2d::fit(&train)?;
        let mut points = BTreeMap::new();
        for &split in splits {
            let mut rows = rows_of(split)?;
            if rows.len() > config.pca.max_points {
                let mut rng = Rng::derived(config.seeds().pca, split.name(), 0);
                let mut keep = rng.sample_indices(rows.len(), config.pca.max_points);
                keep.sort_unstable();
                rows = keep.into_iter().map(|i| rows[i]).collect();
            }
            let x = Matrix::from_rows(&rows.iter().map(|r| r.0).collect::<Vec<_>>())?;
            let proj = pca.transform(&x)?;
            let mut csv = String::from("bag_label,true_instance_label,pc1,pc2\n");
            for ((_, bag, t), p) in rows.iter().zip(proj.iter_rows()) {
                writeln!(csv, "{},{},{},{}", bag.as_u8(), t.as_u8(), p[0], p[1]).unwrap();
            }
            write_text(&layout.pca(kind, split), &csv)?;
            points.insert(split, rows.len());
        }

        let ck = Checkpoint::load(&layout.checkpoint(kind))?;
        let stats = PcaStats {
            loss_kind: kind,
            source: manifest.source,
            fit_split: Split::Train,
            explained_variance: pca.explained_variance,
            total_variance: pca.total_variance,
            points,
            cosine: cosine_diagnostics(train_rows.iter().copied()),
            cosine_projection: split_cosine_diagnostics(
                &ck.model,
                &dataset,
                Split::Train,
                FeatureSource::Projection,
            )?,
        };
        write_json(&layout.pca_stats(kind), &stats)?;
        out.push(stats);
    }
    write_run_manifest(config, &layout)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub encoder: String,
    pub loss_kind: LossKind,
    pub n_runs: usize,
    pub mean: BagMetrics,
    pub std: BagMetrics,
}

pub fn cmd_report(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let layout = begin(config)?;
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for &kind in &config.variants {
        let path = layout.mil_summary(kind);
        if !path.exists() {
            missing.push(kind.name().to_string());
            continue;
        }
        let s: MilSummary = read_json(&path)?;
        rows.push(ReportRow {
            encoder: s.encoder,
            loss_kind: s.loss_kind,
            n_runs: s.n_runs,
            mean: s.mean,
            std: s.std,
        });
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteExperiment(missing));
    }

    let n_runs = rows.iter().map(|r| r.n_runs).max().unwrap_or(0);
    let mut txt = format!(
        "Bag classification on the {} split, mean ± population std over {n_runs} MIL runs\n\n",
        EVAL_SPLIT.name()
    );
    writeln!(
        txt,
        "{:<12} {:>17} {:>17} {:>17}",
        "encoder", "balanced_acc", "accuracy", "auc"
    )
    .unwrap();
    let mut csv = String::from(
        "encoder,loss_kind,n_runs,balanced_acc_mean,balanced_acc_std,accuracy_mean,accuracy_std,auc_mean,auc_std\n",
    );
    for r in &rows {
        let cell = |m: f64, s: f64| format!("{m:.4} ± {s:.4}");
        writeln!(
            txt,
            "{:<12} {:>17} {:>17} {:>17}",
            r.encoder,
            cell(r.mean.balanced_accuracy, r.std.balanced_accuracy),
            cell(r.mean.accuracy, r.std.accuracy),
            cell(r.mean.auc, r.std.auc)
        )
        .unwrap();
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.encoder,
            r.loss_kind.tag(),
            r.n_runs,
            r.mean.balanced_accuracy,
            r.std.balanced_accuracy,
            r.mean.accuracy,
            r.std.accuracy,
            r.mean.auc,
            r.std.auc
        )
        .unwrap();
    }
    write_text(&layout.report_txt(), &txt)?;
    write_text(&layout.report_csv(), &csv)?;
    write_run_manifest(config, &layout)?;
    Ok(rows)
}

/// generate → pretrain → extract → mil → pca → report.
pub fn cmd_all(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cmd_generate(config)?;
    cmd_pretrain(config, None)?;
    cmd_extract(config, None)?;
    cmd_mil(config, None)?;
    cmd_pca(config, None, None)?;
    cmd_report(config)
}
