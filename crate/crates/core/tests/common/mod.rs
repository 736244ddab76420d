//! Naive reference implementations shared by the integration tests.
//!
//! Everything here is written as direct loops over the textbook formulas,
//! independent of the matrix code paths in the library.

#![allow(dead_code)]

use weaksupcon::losses::ContrastiveBatch;
use weaksupcon::mil::AttentionMILModel;
use weaksupcon::numerics::Matrix;
use weaksupcon::rng::Rng;
use weaksupcon::Label;

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

pub fn random_labels(rng: &mut Rng, n: usize) -> Vec<Label> {
    (0..n)
        .map(|_| {
            if rng.uniform() < 0.5 {
                Label::Negative
            } else {
                Label::Positive
            }
        })
        .collect()
}

/// `n` samples, two views each, view `i` paired with `i + n`.
pub fn random_batch(rng: &mut Rng, labels: &[Label], d: usize, tau: f64) -> ContrastiveBatch {
    let n = labels.len();
    let a = random_matrix(rng, n, d);
    let b = random_matrix(rng, n, d);
    ContrastiveBatch::from_views(&a, &b, labels, tau).unwrap()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn cos_at(batch: &ContrastiveBatch, i: usize, j: usize) -> f64 {
    let z = batch.embeddings();
    cosine(z.row(i), z.row(j))
}

/// NT-Xent over `subset`, denominator restricted to the subset.
pub fn naive_simclr(batch: &ContrastiveBatch, subset: &[usize]) -> f64 {
    let tau = batch.tau();
    let mut total = 0.0;
    for &i in subset {
        let p = batch.pair_of()[i];
        let mut denom = 0.0;
        for &k in subset {
            if k != i {
                denom += (cos_at(batch, i, k) / tau).exp();
            }
        }
        total += -((cos_at(batch, i, p) / tau).exp() / denom).ln();
    }
    total
}

/// Supervised contrastive loss; views without a same-label partner are skipped.
pub fn naive_supcon(batch: &ContrastiveBatch, labels: &[usize]) -> f64 {
    let tau = batch.tau();
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&p| p != i && labels[p] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (cos_at(batch, i, a) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += ((cos_at(batch, i, p) / tau).exp() / denom).ln();
        }
        total += -inner / positives.len() as f64;
    }
    total
}

pub fn naive_similarity(batch: &ContrastiveBatch, subset: &[usize]) -> f64 {
    let tau = batch.tau();
    let m = subset.len() as f64;
    let mut total = 0.0;
    for &i in subset {
        let mut inner = 0.0;
        for &j in subset {
            if j != i {
                inner += cos_at(batch, i, j) / tau;
            }
        }
        total += -inner / m;
    }
    total
}

fn with_label(batch: &ContrastiveBatch, label: Label) -> Vec<usize> {
    (0..batch.len())
        .filter(|&i| batch.bag_labels()[i] == label)
        .collect()
}

pub fn naive_weaksupcon(batch: &ContrastiveBatch) -> f64 {
    naive_similarity(batch, &with_label(batch, Label::Negative))
        + naive_simclr(batch, &with_label(batch, Label::Positive))
}

pub fn naive_similarity_on_negatives(batch: &ContrastiveBatch) -> f64 {
    naive_similarity(batch, &with_label(batch, Label::Negative))
}

pub fn bag_label_ids(batch: &ContrastiveBatch) -> Vec<usize> {
    batch
        .bag_labels()
        .iter()
        .map(|l| usize::from(l.is_positive()))
        .collect()
}

/// Mann-Whitney statistic by enumerating every (positive, negative) pair.
pub fn brute_force_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut halves = 0u64;
    let mut pairs = 0u64;
    for (sp, lp) in scores.iter().zip(labels) {
        if !lp.is_positive() {
            continue;
        }
        for (sn, ln) in scores.iter().zip(labels) {
            if ln.is_positive() {
                continue;
            }
            pairs += 1;
            if sp > sn {
                halves += 2;
            } else if sp == sn {
                halves += 1;
            }
        }
    }
    halves as f64 / (2 * pairs) as f64
}

/// Attention weights and pooled embedding, one instance at a time.
pub fn naive_attention(features: &Matrix, model: &AttentionMILModel) -> (Vec<f64>, Vec<f64>) {
    let (n, k) = features.shape();
    let h = model.w.len();
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let f = features.row(i);
        let mut s = 0.0;
        for r in 0..h {
            let mut pre = 0.0;
            for (c, x) in f.iter().enumerate() {
                pre += model.v[(r, c)] * x;
            }
            s += model.w[r] * pre.tanh();
        }
        scores.push(s);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut embedding = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            embedding[c] += weights[i] * features[(i, c)];
        }
    }
    (weights, embedding)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
