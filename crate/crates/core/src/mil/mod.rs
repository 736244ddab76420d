//! Attention MIL on frozen instance features.
//!
//! Instances get a score `w · tanh(V f)`, a softmax over the bag turns the
//! scores into weights, and a logistic classifier reads the weighted sum of
//! the features. Training splits every bag into random pseudo-bags that
//! inherit the bag label; prediction pools the whole bag.

mod metrics;

use serde::{Deserialize, Serialize};

pub use metrics::{accuracy, auc, balanced_accuracy, BagMetrics, MetricsReport};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::numerics::{dot, Matrix};
use crate::optim::{Adam, AdamConfig, Parameters};
use crate::rng::Rng;

/// Scores at or above this threshold predict a positive bag.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MILTrainConfig {
    /// Pseudo-bags per bag and epoch.
    pub n_pseudo_bags: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub attention_hidden: usize,
    /// Z-score features with training-split statistics before MIL.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for MILTrainConfig {
    fn default() -> Self {
        Self {
            n_pseudo_bags: 5,
            epochs: 60,
            learning_rate: 1e-3,
            attention_hidden: 32,
            standardize: true,
            seed: 0,
        }
    }
}

impl MILTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pseudo_bags == 0 {
            return Err(Error::ConfigInvalid("n_pseudo_bags must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::ConfigInvalid("mil epochs must be >= 1".into()));
        }
        if self.attention_hidden == 0 {
            return Err(Error::ConfigInvalid("attention_hidden must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "mil learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMILModel {
    /// `h × k` attention projection.
    pub v: Matrix,
    /// Attention read-out, length `h`.
    pub w: Vec<f64>,
    /// Classifier weight on the pooled embedding, length `k`.
    pub classifier: Vec<f64>,
    pub bias: f64,
}

impl AttentionMILModel {
    /// Gaussian init scaled by fan-in; zero bias.
    pub fn init(feature_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let sv = (1.0 / feature_dim as f64).sqrt();
        let sw = (1.0 / hidden as f64).sqrt();
        let v = Matrix::from_raw(
            hidden,
            feature_dim,
            (0..hidden * feature_dim)
                .map(|_| sv * rng.normal())
                .collect(),
        );
        let w = (0..hidden).map(|_| sw * rng.normal()).collect();
        let classifier = (0..feature_dim).map(|_| sv * rng.normal()).collect();
        Self {
            v,
            w,
            classifier,
            bias: 0.0,
        }
    }

    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        Self {
            v: Matrix::zeros(hidden, feature_dim),
            w: vec![0.0; hidden],
            classifier: vec![0.0; feature_dim],
            bias: 0.0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.v.cols()
    }

    pub fn hidden(&self) -> usize {
        self.v.rows()
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.rows() == 0 {
            return Err(Error::EmptyBag);
        }
        if features.cols() != self.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "bag has {} feature columns, model expects {}",
                features.cols(),
                self.feature_dim()
            )));
        }
        Ok(())
    }
}

impl Parameters for AttentionMILModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.v.values(),
            &self.w,
            &self.classifier,
            std::slice::from_ref(&self.bias),
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.v.values_mut(),
            &mut self.w,
            &mut self.classifier,
            std::slice::from_mut(&mut self.bias),
        ]
    }
}

/// Per-dimension z-scoring with statistics from a set of bags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    /// Population std per dimension; 1 where a dimension is constant.
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(bags: &[Matrix]) -> Result<Self> {
        let k = bags
            .first()
            .map(Matrix::cols)
            .ok_or(Error::EmptyInput("scaler fit"))?;
        let mut mean = vec![0.0; k];
        let mut n = 0usize;
        for row in bags.iter().flat_map(Matrix::iter_rows) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyInput("scaler fit"));
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; k];
        for row in bags.iter().flat_map(Matrix::iter_rows) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub embedding: Vec<f64>,
    pub weights: Vec<f64>,
}

struct PoolCache {
    /// `tanh(V f_i)` per instance, `n × h`.
    hidden: Matrix,
    pooled: Pooled,
}

fn pool_with_cache(features: &Matrix, model: &AttentionMILModel) -> Result<PoolCache> {
    model.check_features(features)?;
    let hidden = {
        let mut t = features.matmul_t(&model.v)?;
        t.values_mut().iter_mut().for_each(|x| *x = x.tanh());
        t
    };
    let scores: Vec<f64> = hidden.iter_rows().map(|t| dot(t, &model.w)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|a| *a /= total);
    let mut embedding = vec![0.0; features.cols()];
    for (a, f) in weights.iter().zip(features.iter_rows()) {
        for (e, x) in embedding.iter_mut().zip(f) {
            *e += a * x;
        }
    }
    Ok(PoolCache {
        hidden,
        pooled: Pooled { embedding, weights },
    })
}

/// Softmax-weighted sum of the instance features.
pub fn attention_pool(features: &Matrix, model: &AttentionMILModel) -> Result<Pooled> {
    Ok(pool_with_cache(features, model)?.pooled)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Positive-class probability from whole-bag pooling.
pub fn mil_predict(model: &AttentionMILModel, features: &Matrix) -> Result<f64> {
    let pooled = attention_pool(features, model)?;
    Ok(sigmoid(
        dot(&model.classifier, &pooled.embedding) + model.bias,
    ))
}

/// Binary cross-entropy of one (pseudo-)bag and its parameter gradient.
pub fn bag_loss_and_grad(
    model: &AttentionMILModel,
    features: &Matrix,
    label: Label,
) -> Result<(f64, AttentionMILModel)> {
    let cache = pool_with_cache(features, model)?;
    let pool = &cache.pooled.embedding;
    let a = &cache.pooled.weights;
    let z = dot(&model.classifier, pool) + model.bias;
    let y = if label.is_positive() { 1.0 } else { 0.0 };
    let loss = softplus(z) - y * z;
    let dz = sigmoid(z) - y;

    let mut grad = AttentionMILModel::zeros(model.feature_dim(), model.hidden());
    grad.bias = dz;
    for (g, p) in grad.classifier.iter_mut().zip(pool) {
        *g = dz * p;
    }
    let da: Vec<f64> = features
        .iter_rows()
        .map(|f| dz * dot(&model.classifier, f))
        .collect();
    let mean_da = dot(a, &da);
    for (i, f) in features.iter_rows().enumerate() {
        let ds = a[i] * (da[i] - mean_da);
        let t = cache.hidden.row(i);
        for (gw, &tj) in grad.w.iter_mut().zip(t) {
            *gw += ds * tj;
        }
        for (j, (&wj, &tj)) in model.w.iter().zip(t).enumerate() {
            let coef = ds * wj * (1.0 - tj * tj);
            for (gv, &x) in grad.v.row_mut(j).iter_mut().zip(f) {
                *gv += coef * x;
            }
        }
    }
    Ok((loss, grad))
}

/// Random partition of the rows into `m` parts whose sizes differ by at
/// most one; fewer parts when the bag has fewer than `m` instances.
pub fn pseudo_bag_split(features: &Matrix, m: usize, rng: &mut Rng) -> Vec<Matrix> {
    let n = features.rows();
    let parts = m.max(1).min(n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let (base, extra) = (n / parts, n % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(features.select_rows(&order[start..start + len]));
        start += len;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MILTrainResult {
    pub model: AttentionMILModel,
    /// Mean pseudo-bag loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains one model; one Adam step per bag on the mean pseudo-bag loss.
pub fn mil_train(
    bags: &[Matrix],
    labels: &[Label],
    config: &MILTrainConfig,
) -> Result<MILTrainResult> {
    config.validate()?;
    if bags.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} bags but {} labels",
            bags.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClassTraining(format!(
            "{n_pos} positive and {} negative training bags",
            labels.len() - n_pos
        )));
    }
    let k = bags[0].cols();
    for b in bags {
        if b.rows() == 0 {
            return Err(Error::EmptyBag);
        }
        if b.cols() != k {
            return Err(Error::ShapeMismatch(
                "bags disagree on feature dimension".into(),
            ));
        }
    }

    let mut model = AttentionMILModel::init(
        k,
        config.attention_hidden,
        &mut Rng::derived(config.seed, "mil-init", 0),
    );
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &model,
    );
    let mut rng = Rng::derived(config.seed, "mil-epochs", 0);
    let mut order: Vec<usize> = (0..bags.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for &b in &order {
            let parts = pseudo_bag_split(&bags[b], config.n_pseudo_bags, &mut rng);
            let scale = 1.0 / parts.len() as f64;
            let mut acc = AttentionMILModel::zeros(k, config.attention_hidden);
            let mut bag_loss = 0.0;
            for part in &parts {
                let (loss, grad) = bag_loss_and_grad(&model, part, labels[b])?;
                bag_loss += loss * scale;
                for (dst, src) in acc.param_slices_mut().into_iter().zip(grad.param_slices()) {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s * scale;
                    }
                }
            }
            if !bag_loss.is_finite() {
                return Err(Error::NonFinite("mil training loss"));
            }
            adam.update(&mut model, &acc);
            total += bag_loss;
        }
        epoch_losses.push(total / bags.len() as f64);
    }
    Ok(MILTrainResult {
        model,
        epoch_losses,
    })
}

/// Scores every bag and computes the three bag-level metrics.
pub fn evaluate(
    model: &AttentionMILModel,
    bags: &[Matrix],
    labels: &[Label],
) -> Result<BagMetrics> {
    let scores = bags
        .iter()
        .map(|b| mil_predict(model, b))
        .collect::<Result<Vec<_>>>()?;
    BagMetrics::from_scores(&scores, labels)
}

#[cfg(test)]
mod tests;
