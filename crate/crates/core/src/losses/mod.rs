//! Contrastive objectives with analytic gradients.
//!
//! Every loss L2-normalizes the embedding rows first and works on unit
//! vectors `u_i = z_i / ‖z_i‖`. Each loss is a function of the similarity
//! matrix `S = U Uᵀ`; it reports `W = ∂L/∂S` (treating `S` as unsymmetric),
//! which gives `∂L/∂U = (W + Wᵀ) U`, and the gradient is then pulled back
//! through the normalization with `∂L/∂z_i = (I − u_i u_iᵀ) ∂L/∂u_i / ‖z_i‖`.

mod batch;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::ContrastiveBatch;

use crate::error::{Error, Result};
use crate::label::Label;
use crate::numerics::{gram_clamped, l2_normalize_rows, logsumexp_unchecked, Matrix};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Simclr,
    /// SupCon with bag labels as pseudo instance labels.
    Supcon,
    Similarity,
    Weaksupcon,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Simclr,
        LossKind::Supcon,
        LossKind::Similarity,
        LossKind::Weaksupcon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Simclr => "simclr",
            LossKind::Supcon => "supcon",
            LossKind::Similarity => "similarity",
            LossKind::Weaksupcon => "weaksupcon",
        }
    }

    /// Upper-case tag used in CSV logs.
    pub fn tag(self) -> &'static str {
        match self {
            LossKind::Simclr => "SIMCLR",
            LossKind::Supcon => "SUPCON",
            LossKind::Similarity => "SIMILARITY",
            LossKind::Weaksupcon => "WEAKSUPCON",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown loss kind {s:?} (expected simclr, supcon, similarity or weaksupcon)"
                ))
            })
    }
}

/// Which views enter the SimCLR denominator when only part of the batch
/// contributes terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimclrDenominator {
    /// Only views of the subset (the positive group inside WeakSupCon).
    #[default]
    Group,
    /// Every view of the batch.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOptions {
    pub simclr_denominator: SimclrDenominator,
    /// Divide the similarity loss's inner sum by `|Neg| − 1`.
    pub similarity_mean_normalize: bool,
    /// Weight on the similarity term inside WeakSupCon.
    pub similarity_weight: f64,
    /// Error on views with no same-label partner instead of skipping them.
    pub supcon_strict: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            simclr_denominator: SimclrDenominator::Group,
            similarity_mean_normalize: false,
            similarity_weight: 1.0,
            supcon_strict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossDiagnostics {
    pub negative_views: usize,
    pub positive_views: usize,
    /// SupCon views skipped because no other view shares their label.
    pub skipped_views: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// ∂value/∂embeddings, same shape as the batch embeddings.
    pub grad: Matrix,
    pub diagnostics: LossDiagnostics,
}

/// Loss value plus `W = ∂L/∂S` over global view indices.
struct Partial {
    value: f64,
    w: Matrix,
}

impl Partial {
    fn new(n: usize) -> Self {
        Self {
            value: 0.0,
            w: Matrix::zeros(n, n),
        }
    }
}

struct Unit {
    u: Matrix,
    norms: Vec<f64>,
    s: Matrix,
}

fn unit(batch: &ContrastiveBatch) -> Result<Unit> {
    let z = batch.embeddings();
    let u = l2_normalize_rows(z)?;
    let norms = z.iter_rows().map(crate::numerics::norm).collect();
    let s = gram_clamped(&u);
    Ok(Unit { u, norms, s })
}

fn finish(unit: &Unit, part: Partial, diagnostics: LossDiagnostics) -> Result<LossOutput> {
    let n = unit.u.rows();
    let d = unit.u.cols();
    let mut sym = part.w.clone();
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] += part.w[(j, i)];
        }
    }
    let gu = sym.matmul(&unit.u)?;
    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        let ui = unit.u.row(i);
        let gi = gu.row(i);
        let radial: f64 = crate::numerics::dot(gi, ui);
        let inv = 1.0 / unit.norms[i];
        for ((g, &gv), &uv) in grad.row_mut(i).iter_mut().zip(gi).zip(ui) {
            *g = (gv - radial * uv) * inv;
        }
    }
    if !part.value.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("loss output"));
    }
    Ok(LossOutput {
        value: part.value,
        grad,
        diagnostics,
    })
}

fn check_subset(batch: &ContrastiveBatch, subset: &[usize]) -> Result<Vec<bool>> {
    let n = batch.len();
    let mut member = vec![false; n];
    for &i in subset {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        if member[i] {
            return Err(Error::InvalidBatch(format!(
                "view {i} listed twice in subset"
            )));
        }
        member[i] = true;
    }
    Ok(member)
}

/// One NT-Xent term `ℓ_{i,j} = −log(exp(s_ij/τ) / Σ_{k≠i} exp(s_ik/τ))`
/// over the index set spanned by the square similarity matrix `s`.
pub fn simclr_pair_term(i: usize, j: usize, s: &Matrix, tau: f64) -> Result<f64> {
    let k = s.rows();
    if s.cols() != k {
        return Err(Error::ShapeMismatch(
            "similarity matrix must be square".into(),
        ));
    }
    for idx in [i, j] {
        if idx >= k {
            return Err(Error::IndexOutOfRange { index: idx, len: k });
        }
    }
    if i == j {
        return Err(Error::InvalidBatch(format!(
            "pair term needs i != j, got {i}"
        )));
    }
    let row = s.row(i);
    let lse = logsumexp_unchecked(
        row.iter()
            .enumerate()
            .filter(move |&(c, _)| c != i)
            .map(move |(_, &v)| v / tau),
    );
    Ok(lse - row[j] / tau)
}

fn simclr_partial(
    batch: &ContrastiveBatch,
    unit: &Unit,
    subset: &[usize],
    denominator: SimclrDenominator,
    weight: f64,
    part: &mut Partial,
) -> Result<()> {
    let member = check_subset(batch, subset)?;
    for &i in subset {
        let p = batch.pair_of()[i];
        if !member[p] {
            return Err(Error::SubsetNotPairClosed { view: i, pair: p });
        }
    }
    let tau = batch.tau();
    let columns: Vec<usize> = match denominator {
        SimclrDenominator::Group => subset.to_vec(),
        SimclrDenominator::Batch => (0..batch.len()).collect(),
    };
    for &i in subset {
        let p = batch.pair_of()[i];
        let others = || columns.iter().copied().filter(move |&k| k != i);
        let lse = logsumexp_unchecked(others().map(|k| unit.s[(i, k)] / tau));
        part.value += weight * (lse - unit.s[(i, p)] / tau);
        for k in others() {
            let soft = (unit.s[(i, k)] / tau - lse).exp();
            part.w[(i, k)] += weight * soft / tau;
        }
        part.w[(i, p)] -= weight / tau;
    }
    Ok(())
}

fn similarity_partial(
    batch: &ContrastiveBatch,
    unit: &Unit,
    subset: &[usize],
    mean_normalize: bool,
    weight: f64,
    part: &mut Partial,
) -> Result<()> {
    check_subset(batch, subset)?;
    let m = subset.len();
    if m < 2 {
        return Ok(());
    }
    let mut coef = 1.0 / (m as f64 * batch.tau());
    if mean_normalize {
        coef /= (m - 1) as f64;
    }
    coef *= weight;
    for &i in subset {
        for &j in subset {
            if i != j {
                part.value -= coef * unit.s[(i, j)];
                part.w[(i, j)] -= coef;
            }
        }
    }
    Ok(())
}

/// NT-Xent summed over `subset`, with the denominator restricted to the
/// subset. The subset must contain both views of every pair it touches.
pub fn simclr_loss(batch: &ContrastiveBatch, subset: &[usize]) -> Result<LossOutput> {
    simclr_loss_with(batch, subset, SimclrDenominator::Group)
}

pub fn simclr_loss_with(
    batch: &ContrastiveBatch,
    subset: &[usize],
    denominator: SimclrDenominator,
) -> Result<LossOutput> {
    let unit = unit(batch)?;
    let mut part = Partial::new(batch.len());
    simclr_partial(batch, &unit, subset, denominator, 1.0, &mut part)?;
    finish(&unit, part, diagnostics_for(batch, 0))
}

/// Supervised contrastive loss with per-view class ids.
///
/// Views with no other same-label view are skipped and counted in
/// `diagnostics.skipped_views`.
pub fn supcon_loss(batch: &ContrastiveBatch, labels: &[usize]) -> Result<LossOutput> {
    supcon_loss_with(batch, labels, false)
}

pub fn supcon_loss_with(
    batch: &ContrastiveBatch,
    labels: &[usize],
    strict: bool,
) -> Result<LossOutput> {
    let n = batch.len();
    if labels.len() != n {
        return Err(Error::InvalidBatch(format!(
            "{} labels for {n} views",
            labels.len()
        )));
    }
    let unit = unit(batch)?;
    let tau = batch.tau();
    let mut part = Partial::new(n);
    let mut skipped = 0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&p| p != i && labels[p] == labels[i])
            .collect();
        if positives.is_empty() {
            if strict {
                return Err(Error::LonelyLabel { view: i });
            }
            skipped += 1;
            continue;
        }
        let others = || (0..n).filter(move |&a| a != i);
        let lse = logsumexp_unchecked(others().map(|a| unit.s[(i, a)] / tau));
        let inv_p = 1.0 / positives.len() as f64;
        let mean_pos: f64 = positives.iter().map(|&p| unit.s[(i, p)]).sum::<f64>() * inv_p;
        part.value += lse - mean_pos / tau;
        for a in others() {
            part.w[(i, a)] += (unit.s[(i, a)] / tau - lse).exp() / tau;
        }
        for &p in &positives {
            part.w[(i, p)] -= inv_p / tau;
        }
    }
    finish(&unit, part, diagnostics_for(batch, skipped))
}

/// Mutual-similarity loss `Σ_{i∈S} (−1/|S|) Σ_{j∈S, j≠i} u_i·u_j / τ`.
pub fn similarity_loss(batch: &ContrastiveBatch, subset: &[usize]) -> Result<LossOutput> {
    similarity_loss_with(batch, subset, false)
}

pub fn similarity_loss_with(
    batch: &ContrastiveBatch,
    subset: &[usize],
    mean_normalize: bool,
) -> Result<LossOutput> {
    let unit = unit(batch)?;
    let mut part = Partial::new(batch.len());
    similarity_partial(batch, &unit, subset, mean_normalize, 1.0, &mut part)?;
    finish(&unit, part, diagnostics_for(batch, 0))
}

/// Similarity loss on negative-bag views plus SimCLR on positive-bag views.
pub fn weaksupcon_loss(batch: &ContrastiveBatch) -> Result<LossOutput> {
    weaksupcon_loss_with(batch, &LossOptions::default())
}

pub fn weaksupcon_loss_with(batch: &ContrastiveBatch, opts: &LossOptions) -> Result<LossOutput> {
    let unit = unit(batch)?;
    let mut part = Partial::new(batch.len());
    let neg = batch.views_with_label(Label::Negative);
    let pos = batch.views_with_label(Label::Positive);
    similarity_partial(
        batch,
        &unit,
        &neg,
        opts.similarity_mean_normalize,
        opts.similarity_weight,
        &mut part,
    )?;
    simclr_partial(batch, &unit, &pos, opts.simclr_denominator, 1.0, &mut part)?;
    finish(&unit, part, diagnostics_for(batch, 0))
}

fn diagnostics_for(batch: &ContrastiveBatch, skipped_views: usize) -> LossDiagnostics {
    let positive_views = batch
        .bag_labels()
        .iter()
        .filter(|l| l.is_positive())
        .count();
    LossDiagnostics {
        negative_views: batch.len() - positive_views,
        positive_views,
        skipped_views,
    }
}

/// Bag labels as SupCon class ids: every view from a positive bag is
/// pseudo-labeled positive.
pub fn pseudo_labels(batch: &ContrastiveBatch) -> Vec<usize> {
    batch
        .bag_labels()
        .iter()
        .map(|l| usize::from(l.as_u8()))
        .collect()
}

pub fn loss_and_grad(kind: LossKind, batch: &ContrastiveBatch) -> Result<LossOutput> {
    loss_and_grad_with(kind, batch, &LossOptions::default())
}

pub fn loss_and_grad_with(
    kind: LossKind,
    batch: &ContrastiveBatch,
    opts: &LossOptions,
) -> Result<LossOutput> {
    match kind {
        LossKind::Simclr => {
            let all: Vec<usize> = (0..batch.len()).collect();
            simclr_loss_with(batch, &all, opts.simclr_denominator)
        }
        LossKind::Supcon => supcon_loss_with(batch, &pseudo_labels(batch), opts.supcon_strict),
        LossKind::Similarity => similarity_loss_with(
            batch,
            &batch.views_with_label(Label::Negative),
            opts.similarity_mean_normalize,
        ),
        LossKind::Weaksupcon => weaksupcon_loss_with(batch, opts),
    }
}
