use serde::{Deserialize, Serialize};

use super::{Architecture, EncoderModel};
use crate::datagen::{augment_unchecked, AugmentPolicy, MILDataset, Split};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::losses::{loss_and_grad_with, ContrastiveBatch, LossKind, LossOptions, DEFAULT_TAU};
use crate::numerics::{dot, norm, Matrix, NORM_EPS};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub loss_kind: LossKind,
    pub tau: f64,
    /// Original samples per batch; the batch holds twice as many views.
    pub batch_samples: usize,
    pub epochs: usize,
    /// Defaults to `⌈train instances / batch_samples⌉`.
    pub steps_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub augmentation: AugmentPolicy,
    /// Fraction of each batch drawn from negative bags; `None` samples
    /// uniformly over all training instances.
    pub stratify_ratio: Option<f64>,
    pub architecture: Architecture,
    pub loss_options: LossOptions,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Weaksupcon,
            tau: DEFAULT_TAU,
            batch_samples: 128,
            epochs: 30,
            steps_per_epoch: None,
            learning_rate: AdamConfig::default().learning_rate,
            augmentation: AugmentPolicy::default(),
            stratify_ratio: Some(0.5),
            architecture: Architecture::default(),
            loss_options: LossOptions::default(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ConfigInvalid(m));
        if self.batch_samples < 2 {
            return fail(format!(
                "batch_samples must be >= 2, got {}",
                self.batch_samples
            ));
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1".into());
        }
        if self.steps_per_epoch == Some(0) {
            return fail("steps_per_epoch must be >= 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if let Some(r) = self.stratify_ratio {
            if !(0.0..=1.0).contains(&r) {
                return fail(format!("stratify_ratio must be in [0, 1], got {r}"));
            }
        }
        if self.architecture.feature_dim == 0 || self.architecture.projection_dim == 0 {
            return fail("layer widths must be >= 1".into());
        }
        self.augmentation.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Training instances grouped by the label of their bag.
#[derive(Debug, Clone)]
pub struct InstancePool<'a> {
    dataset: &'a MILDataset,
    negative: Vec<(usize, usize)>,
    positive: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    /// `2N × d`; view `i` and view `i + N` are augmentations of one instance.
    pub views: Matrix,
    pub pair_of: Vec<usize>,
    pub bag_label: Vec<Label>,
    /// `(train bag index, row)` of each of the N sampled instances.
    pub sources: Vec<(usize, usize)>,
}

impl<'a> InstancePool<'a> {
    pub fn new(dataset: &'a MILDataset) -> Result<Self> {
        let mut negative = Vec::new();
        let mut positive = Vec::new();
        for (b, bag) in dataset.train.iter().enumerate() {
            let target = match bag.bag_label {
                Label::Negative => &mut negative,
                Label::Positive => &mut positive,
            };
            target.extend((0..bag.len()).map(|r| (b, r)));
        }
        if negative.is_empty() && positive.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            dataset,
            negative,
            positive,
        })
    }

    pub fn len(&self) -> usize {
        self.negative.len() + self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn draw(pool: &[(usize, usize)], k: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
        if k <= pool.len() {
            rng.sample_indices(pool.len(), k)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        } else {
            (0..k).map(|_| pool[rng.below(pool.len())]).collect()
        }
    }

    pub fn make_batch(
        &self,
        rng: &mut Rng,
        batch_samples: usize,
        stratify_ratio: Option<f64>,
        policy: &AugmentPolicy,
    ) -> TrainingBatch {
        let sources = match stratify_ratio {
            Some(r) => {
                let mut n_neg = (r * batch_samples as f64).round() as usize;
                if self.positive.is_empty() {
                    n_neg = batch_samples;
                } else if self.negative.is_empty() {
                    n_neg = 0;
                }
                let mut s = Self::draw(&self.negative, n_neg, rng);
                s.extend(Self::draw(&self.positive, batch_samples - n_neg, rng));
                s
            }
            None => {
                let all: Vec<(usize, usize)> = self
                    .negative
                    .iter()
                    .chain(&self.positive)
                    .copied()
                    .collect();
                Self::draw(&all, batch_samples, rng)
            }
        };

        let n = sources.len();
        let d = self.dataset.instance_dim();
        let mut first = Vec::with_capacity(n * d);
        let mut second = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for &(b, r) in &sources {
            let bag = &self.dataset.train[b];
            let x = bag.instances.row(r);
            first.extend(augment_unchecked(x, rng, policy));
            second.extend(augment_unchecked(x, rng, policy));
            labels.push(bag.bag_label);
        }
        first.extend(second);
        TrainingBatch {
            views: Matrix::from_raw(2 * n, d, first),
            pair_of: (0..2 * n).map(|i| (i + n) % (2 * n)).collect(),
            bag_label: labels.iter().chain(&labels).copied().collect(),
            sources,
        }
    }
}

/// Samples N training instances (stratified by bag label when configured)
/// and augments each twice.
pub fn make_batch(
    dataset: &MILDataset,
    rng: &mut Rng,
    config: &PretrainConfig,
) -> Result<TrainingBatch> {
    config.augmentation.validate()?;
    let pool = InstancePool::new(dataset)?;
    Ok(pool.make_batch(
        rng,
        config.batch_samples,
        config.stratify_ratio,
        &config.augmentation,
    ))
}

fn non_finite(step: usize, kind: LossKind, detail: String) -> Error {
    Error::NonFiniteLoss {
        step,
        loss_kind: kind.tag().to_string(),
        detail,
    }
}

/// One Adam step on the selected loss; returns the loss before the update.
pub fn train_step(
    model: &mut EncoderModel,
    optimizer: &mut Adam,
    batch: &TrainingBatch,
    loss_kind: LossKind,
    tau: f64,
    options: &LossOptions,
) -> Result<f64> {
    let step = optimizer.step as usize;
    let fwd = model.forward(&batch.views)?;
    if !fwd.projections.is_finite() {
        return Err(non_finite(
            step,
            loss_kind,
            "projections contain NaN/Inf".into(),
        ));
    }
    let cb = ContrastiveBatch::new(
        fwd.projections.clone(),
        batch.pair_of.clone(),
        batch.bag_label.clone(),
        tau,
    )?;
    let out = loss_and_grad_with(loss_kind, &cb, options).map_err(|e| match e {
        Error::NonFinite(_) | Error::ZeroRow { .. } => non_finite(step, loss_kind, e.to_string()),
        other => other,
    })?;
    let grads = model.backward(&fwd.cache, &out.grad)?;
    optimizer.update(model, &grads);
    if !model
        .trunk
        .layers
        .iter()
        .chain(&model.head.layers)
        .all(|l| l.weight.is_finite())
    {
        return Err(non_finite(step, loss_kind, "parameters diverged".into()));
    }
    Ok(out.value)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainLog {
    /// Loss of every step, in order.
    pub step_losses: Vec<f64>,
    /// Mean step loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn pretrain(
    dataset: &MILDataset,
    config: &PretrainConfig,
) -> Result<(EncoderModel, PretrainLog)> {
    config.validate()?;
    let pool = InstancePool::new(dataset)?;
    let mut init_rng = Rng::derived(config.seed, "encoder-init", 0);
    let mut batch_rng = Rng::derived(config.seed, "encoder-batches", 0);
    let mut model = EncoderModel::init(dataset.instance_dim(), &config.architecture, &mut init_rng);
    let mut adam = Adam::new(config.adam(), &model);
    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| pool.len().div_ceil(config.batch_samples));

    let mut log = PretrainLog::default();
    for _epoch in 0..config.epochs {
        let mut total = 0.0;
        for _ in 0..steps {
            let batch = pool.make_batch(
                &mut batch_rng,
                config.batch_samples,
                config.stratify_ratio,
                &config.augmentation,
            );
            let loss = train_step(
                &mut model,
                &mut adam,
                &batch,
                config.loss_kind,
                config.tau,
                &config.loss_options,
            )?;
            log.step_losses.push(loss);
            total += loss;
        }
        log.epoch_losses.push(total / steps as f64);
    }
    Ok((model, log))
}

/// Which network output is handed to MIL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    #[default]
    Trunk,
    Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub split: Split,
    pub bag_id: u64,
    pub bag_label: Label,
    /// One row per instance, in instance order.
    pub features: Matrix,
}

/// Un-augmented features for every bag of every split.
pub fn extract_features(
    model: &EncoderModel,
    dataset: &MILDataset,
    source: FeatureSource,
) -> Result<Vec<FeatureTable>> {
    if model.input_dim() != dataset.instance_dim() {
        return Err(Error::ShapeMismatch(format!(
            "model takes {}-dim input, dataset has {}",
            model.input_dim(),
            dataset.instance_dim()
        )));
    }
    dataset
        .bags()
        .map(|(split, bag)| {
            let fwd = model.forward(&bag.instances)?;
            Ok(FeatureTable {
                split,
                bag_id: bag.bag_id,
                bag_label: bag.bag_label,
                features: match source {
                    FeatureSource::Trunk => fwd.features,
                    FeatureSource::Projection => fwd.projections,
                },
            })
        })
        .collect()
}

/// Mean pairwise cosine similarities between groups of instance features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineDiagnostics {
    /// Over distinct pairs of negative-bag instances.
    pub negative_negative: f64,
    /// Between negative-bag instances and truly positive instances.
    pub negative_true_positive: f64,
    /// Over distinct pairs of all instances.
    pub all_pairs: f64,
    pub n_negative: usize,
    pub n_true_positive: usize,
}

impl CosineDiagnostics {
    /// `negative_negative − negative_true_positive`.
    pub fn separation(&self) -> f64 {
        self.negative_negative - self.negative_true_positive
    }
}

/// Rows are `(features, bag label, true instance label)`. Rows with
/// (near-)zero norm have no direction and are ignored.
pub fn cosine_diagnostics<'r>(
    rows: impl IntoIterator<Item = (&'r [f64], Label, Label)>,
) -> CosineDiagnostics {
    let mut sum_neg: Vec<f64> = Vec::new();
    let mut sum_pos: Vec<f64> = Vec::new();
    let mut sum_all: Vec<f64> = Vec::new();
    let (mut n_neg, mut n_pos, mut n_all) = (0usize, 0usize, 0usize);
    let add = |acc: &mut Vec<f64>, u: &[f64]| {
        if acc.is_empty() {
            acc.resize(u.len(), 0.0);
        }
        acc.iter_mut().zip(u).for_each(|(a, v)| *a += v);
    };
    for (x, bag, truth) in rows {
        let n = norm(x);
        if n <= NORM_EPS {
            continue;
        }
        let u: Vec<f64> = x.iter().map(|v| v / n).collect();
        add(&mut sum_all, &u);
        n_all += 1;
        if bag == Label::Negative {
            add(&mut sum_neg, &u);
            n_neg += 1;
        }
        if truth == Label::Positive {
            add(&mut sum_pos, &u);
            n_pos += 1;
        }
    }
    // mean over i≠j of u_i·u_j = (‖Σu‖² − n) / (n(n−1))
    let within = |s: &[f64], n: usize| {
        if n < 2 {
            f64::NAN
        } else {
            (dot(s, s) - n as f64) / (n * (n - 1)) as f64
        }
    };
    let cross = if n_neg == 0 || n_pos == 0 {
        f64::NAN
    } else {
        dot(&sum_neg, &sum_pos) / (n_neg * n_pos) as f64
    };
    CosineDiagnostics {
        negative_negative: within(&sum_neg, n_neg),
        negative_true_positive: cross,
        all_pairs: within(&sum_all, n_all),
        n_negative: n_neg,
        n_true_positive: n_pos,
    }
}

/// Cosine diagnostics of one split, on trunk features or projections.
pub fn split_cosine_diagnostics(
    model: &EncoderModel,
    dataset: &MILDataset,
    split: Split,
    source: FeatureSource,
) -> Result<CosineDiagnostics> {
    let mut outputs = Vec::new();
    for bag in dataset.split(split) {
        let fwd = model.forward(&bag.instances)?;
        let m = match source {
            FeatureSource::Trunk => fwd.features,
            FeatureSource::Projection => fwd.projections,
        };
        outputs.push((m, bag));
    }
    Ok(cosine_diagnostics(outputs.iter().flat_map(|(m, bag)| {
        m.iter_rows()
            .zip(&bag.true_instance_labels)
            .map(move |(r, &t)| (r, bag.bag_label, t))
    })))
}
