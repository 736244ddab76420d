use crate::error::{Error, Result};
use crate::label::Label;
use crate::numerics::Matrix;

/// 2N augmented views, their pairing and the bag label of every view.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    embeddings: Matrix,
    pair_of: Vec<usize>,
    bag_label: Vec<Label>,
    tau: f64,
}

impl ContrastiveBatch {
    pub fn new(
        embeddings: Matrix,
        pair_of: Vec<usize>,
        bag_label: Vec<Label>,
        tau: f64,
    ) -> Result<Self> {
        let n = embeddings.rows();
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::InvalidBatch(format!(
                "need an even number of views >= 2, got {n}"
            )));
        }
        if pair_of.len() != n || bag_label.len() != n {
            return Err(Error::InvalidBatch(format!(
                "{n} views but {} pair entries and {} labels",
                pair_of.len(),
                bag_label.len()
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidBatch(format!(
                "temperature must be > 0, got {tau}"
            )));
        }
        for (i, &p) in pair_of.iter().enumerate() {
            if p >= n {
                return Err(Error::IndexOutOfRange { index: p, len: n });
            }
            if p == i || pair_of[p] != i {
                return Err(Error::InvalidBatch(format!(
                    "pairing is not a fixed-point-free involution at view {i}"
                )));
            }
            if bag_label[p] != bag_label[i] {
                return Err(Error::InvalidBatch(format!(
                    "views {i} and {p} are paired but carry different bag labels"
                )));
            }
        }
        if !embeddings.is_finite() {
            return Err(Error::NonFinite("batch embeddings"));
        }
        Ok(Self {
            embeddings,
            pair_of,
            bag_label,
            tau,
        })
    }

    /// Stacks `first` over `second` so that view `i` pairs with `i + N`.
    pub fn from_views(first: &Matrix, second: &Matrix, labels: &[Label], tau: f64) -> Result<Self> {
        let n = first.rows();
        if second.shape() != first.shape() || labels.len() != n {
            return Err(Error::InvalidBatch(format!(
                "view shapes {:?}/{:?} with {} labels",
                first.shape(),
                second.shape(),
                labels.len()
            )));
        }
        let embeddings = Matrix::vstack(&[first, second])?;
        let pair_of = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
        let bag_label = labels.iter().chain(labels).copied().collect();
        Self::new(embeddings, pair_of, bag_label, tau)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn pair_of(&self) -> &[usize] {
        &self.pair_of
    }

    pub fn bag_labels(&self) -> &[Label] {
        &self.bag_label
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn views_with_label(&self, label: Label) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.bag_label[i] == label)
            .collect()
    }

    /// Same batch with new embeddings (e.g. a finite-difference probe).
    pub fn with_embeddings(&self, embeddings: Matrix) -> Result<Self> {
        if embeddings.rows() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for a batch of {} views",
                embeddings.rows(),
                self.len()
            )));
        }
        Self::new(
            embeddings,
            self.pair_of.clone(),
            self.bag_label.clone(),
            self.tau,
        )
    }

    /// Reorders views so that new view `a` is old view `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut inv = vec![usize::MAX; n];
        for (a, &old) in perm.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return Err(Error::InvalidBatch("not a permutation".into()));
            }
            inv[old] = a;
        }
        if perm.len() != n {
            return Err(Error::InvalidBatch("not a permutation".into()));
        }
        let embeddings = self.embeddings.select_rows(perm);
        let pair_of = perm.iter().map(|&old| inv[self.pair_of[old]]).collect();
        let bag_label = perm.iter().map(|&old| self.bag_label[old]).collect();
        Self::new(embeddings, pair_of, bag_label, self.tau)
    }
}
