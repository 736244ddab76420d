//! Seeded synthetic MIL datasets.
//!
//! Negative instances come from a mixture of `n_neg_clusters` isotropic
//! Gaussians whose centers sit at distance `cluster_separation` from the
//! origin in random directions. Positive instances come from
//! `n_pos_clusters` Gaussians centered `cluster_separation` away from the
//! centroid of the negative centers. Every bag additionally gets its own
//! random offset (`bag_shift_std`), mimicking slide-level appearance shifts.
//! A positive bag of size `n` holds exactly `⌈π·n⌉` positive instances at
//! uniformly random positions.
//!
//! Draw order (all from one [`Rng`] seeded with `config.seed`):
//! negative centers, positive centers, then bags split by split
//! (train, val, test), negatives before positives. Per bag: size, bag
//! offset, positive positions (positive bags only), then per instance the
//! cluster index followed by `instance_dim` normal draws.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::numerics::{norm, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticMILConfig {
    pub n_neg_bags: SplitCounts,
    pub n_pos_bags: SplitCounts,
    /// Inclusive `[min, max]` instances per bag.
    pub bag_size_range: [usize; 2],
    pub instance_dim: usize,
    /// Fraction of positive instances inside a positive bag.
    pub positive_fraction: f64,
    pub n_neg_clusters: usize,
    pub n_pos_clusters: usize,
    /// Within-cluster standard deviation.
    pub cluster_spread: f64,
    /// Distance scale between cluster centers.
    pub cluster_separation: f64,
    /// Std of the per-bag offset shared by all instances of a bag.
    #[serde(default)]
    pub bag_shift_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticMILConfig {
    /// Low positive fraction regime (π = 0.08).
    pub fn camelyon_like() -> Self {
        Self {
            n_neg_bags: SplitCounts {
                train: 40,
                val: 10,
                test: 50,
            },
            n_pos_bags: SplitCounts {
                train: 40,
                val: 10,
                test: 50,
            },
            bag_size_range: [30, 60],
            instance_dim: 32,
            positive_fraction: 0.08,
            n_neg_clusters: 6,
            n_pos_clusters: 2,
            cluster_spread: 1.0,
            cluster_separation: 3.25,
            bag_shift_std: 0.0,
            seed: 0,
        }
    }

    /// Large positive fraction regime (π = 0.6). Positive clusters sit
    /// closer to the negatives so bag classification does not saturate.
    pub fn rvt_like() -> Self {
        Self {
            positive_fraction: 0.6,
            cluster_separation: 1.5,
            ..Self::camelyon_like()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ConfigInvalid(m));
        let pi = self.positive_fraction;
        if !(pi > 0.0 && pi <= 1.0) {
            return fail(format!("positive_fraction must be in (0, 1], got {pi}"));
        }
        let [lo, hi] = self.bag_size_range;
        if lo < 2 || hi < lo {
            return fail(format!(
                "bag_size_range must satisfy 2 <= min <= max, got [{lo}, {hi}]"
            ));
        }
        for (name, v) in [
            ("instance_dim", self.instance_dim),
            ("n_neg_clusters", self.n_neg_clusters),
            ("n_pos_clusters", self.n_pos_clusters),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        for split in Split::ALL {
            if self.n_neg_bags.get(split) == 0 || self.n_pos_bags.get(split) == 0 {
                return fail(format!(
                    "every split needs >= 1 bag per class ({})",
                    split.name()
                ));
            }
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return fail("cluster_spread must be > 0".into());
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return fail("cluster_separation must be > 0".into());
        }
        if !(self.bag_shift_std >= 0.0 && self.bag_shift_std.is_finite()) {
            return fail("bag_shift_std must be >= 0".into());
        }
        Ok(())
    }
}

/// Number of positive instances in a positive bag of `n` instances.
pub fn positives_in_bag(positive_fraction: f64, n: usize) -> usize {
    // slack absorbs products like 0.6 * 10 = 6.000000000000001
    let k = (positive_fraction * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub bag_id: u64,
    pub bag_label: Label,
    pub instances: Matrix,
    /// Ground truth, for diagnostics only.
    pub true_instance_labels: Vec<Label>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn file_name(&self) -> String {
        format!("bag_{}.csv", self.bag_id)
    }

    fn to_csv(&self) -> String {
        let d = self.instances.cols();
        let mut out = String::from("instance_idx,true_label");
        for j in 0..d {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for (i, row) in self.instances.iter_rows().enumerate() {
            out.push_str(&format!("{i},{}", self.true_instance_labels[i].as_u8()));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MILDataset {
    pub config: SyntheticMILConfig,
    pub train: Vec<Bag>,
    pub val: Vec<Bag>,
    pub test: Vec<Bag>,
}

impl MILDataset {
    pub fn split(&self, split: Split) -> &[Bag] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn bags(&self) -> impl Iterator<Item = (Split, &Bag)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |b| (s, b)))
    }

    pub fn instance_dim(&self) -> usize {
        self.config.instance_dim
    }
}

fn random_direction(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate_dataset(config: &SyntheticMILConfig) -> Result<MILDataset> {
    config.validate()?;
    let d = config.instance_dim;
    let mut rng = Rng::new(config.seed);

    let neg_centers: Vec<Vec<f64>> = (0..config.n_neg_clusters)
        .map(|_| {
            random_direction(&mut rng, d)
                .into_iter()
                .map(|x| x * config.cluster_separation)
                .collect()
        })
        .collect();
    let mut centroid = vec![0.0; d];
    for c in &neg_centers {
        centroid.iter_mut().zip(c).for_each(|(m, v)| *m += v);
    }
    centroid
        .iter_mut()
        .for_each(|m| *m /= config.n_neg_clusters as f64);
    let pos_centers: Vec<Vec<f64>> = (0..config.n_pos_clusters)
        .map(|_| {
            let dir = random_direction(&mut rng, d);
            centroid
                .iter()
                .zip(dir)
                .map(|(c, u)| c + config.cluster_separation * u)
                .collect()
        })
        .collect();

    let mut next_id = 0u64;
    let mut splits: BTreeMap<Split, Vec<Bag>> = BTreeMap::new();
    for split in Split::ALL {
        let mut bags = Vec::new();
        for label in [Label::Negative, Label::Positive] {
            let count = match label {
                Label::Negative => config.n_neg_bags.get(split),
                Label::Positive => config.n_pos_bags.get(split),
            };
            for _ in 0..count {
                let n = rng.range_inclusive(config.bag_size_range[0], config.bag_size_range[1]);
                let shift: Vec<f64> = (0..d)
                    .map(|_| config.bag_shift_std * rng.normal())
                    .collect();
                let mut truth = vec![Label::Negative; n];
                if label == Label::Positive {
                    let k = positives_in_bag(config.positive_fraction, n);
                    for idx in rng.sample_indices(n, k) {
                        truth[idx] = Label::Positive;
                    }
                }
                let mut values = Vec::with_capacity(n * d);
                for &t in &truth {
                    let center = match t {
                        Label::Negative => &neg_centers[rng.below(neg_centers.len())],
                        Label::Positive => &pos_centers[rng.below(pos_centers.len())],
                    };
                    for j in 0..d {
                        values.push(center[j] + shift[j] + config.cluster_spread * rng.normal());
                    }
                }
                bags.push(Bag {
                    bag_id: next_id,
                    bag_label: label,
                    instances: Matrix::new(n, d, values)?,
                    true_instance_labels: truth,
                });
                next_id += 1;
            }
        }
        splits.insert(split, bags);
    }

    Ok(MILDataset {
        config: config.clone(),
        train: splits.remove(&Split::Train).unwrap_or_default(),
        val: splits.remove(&Split::Val).unwrap_or_default(),
        test: splits.remove(&Split::Test).unwrap_or_default(),
    })
}

/// Vector-space augmentation: random scaling, coordinate dropout and
/// additive Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub noise_std: f64,
    pub dropout_prob: f64,
    pub scale_range: [f64; 2],
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            noise_std: 0.0,
            dropout_prob: 0.0,
            scale_range: [1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.scale_range;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::PolicyInvalid(format!(
                "noise_std {}",
                self.noise_std
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::PolicyInvalid(format!(
                "dropout_prob must be in [0, 1), got {}",
                self.dropout_prob
            )));
        }
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::PolicyInvalid(format!(
                "scale_range must satisfy 0 < a <= b, got [{a}, {b}]"
            )));
        }
        Ok(())
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            noise_std: 0.3,
            dropout_prob: 0.1,
            scale_range: [0.8, 1.2],
        }
    }
}

/// Returns `s·(x ⊙ mask) + ε`.
///
/// Draws the scale first, then for each coordinate one uniform for the
/// dropout mask and one normal for the noise.
pub fn augment_instance(x: &[f64], rng: &mut Rng, policy: &AugmentPolicy) -> Result<Vec<f64>> {
    policy.validate()?;
    Ok(augment_unchecked(x, rng, policy))
}

pub(crate) fn augment_unchecked(x: &[f64], rng: &mut Rng, policy: &AugmentPolicy) -> Vec<f64> {
    let [a, b] = policy.scale_range;
    let s = rng.uniform_range(a, b);
    x.iter()
        .map(|&v| {
            let keep = rng.uniform() >= policy.dropout_prob;
            let noise = policy.noise_std * rng.normal();
            let masked = if keep { v } else { 0.0 };
            s * masked + noise
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BagEntry {
    pub bag_id: u64,
    pub split: Split,
    pub bag_label: Label,
    pub n_instances: usize,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: SyntheticMILConfig,
    pub splits: BTreeMap<Split, Vec<u64>>,
    pub bags: Vec<BagEntry>,
}

pub const DATASET_MANIFEST: &str = "manifest.json";

pub fn save_dataset(dataset: &MILDataset, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut manifest = DatasetManifest {
        config: dataset.config.clone(),
        splits: BTreeMap::new(),
        bags: Vec::new(),
    };
    for (split, bag) in dataset.bags() {
        manifest.splits.entry(split).or_default().push(bag.bag_id);
        let file = bag.file_name();
        let path = dir.join(&file);
        fs::write(&path, bag.to_csv()).map_err(|e| Error::io(&path, e))?;
        manifest.bags.push(BagEntry {
            bag_id: bag.bag_id,
            split,
            bag_label: bag.bag_label,
            n_instances: bag.len(),
            file: file.clone(),
        });
        files.push(file);
    }
    let path = dir.join(DATASET_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    files.push(DATASET_MANIFEST.to_string());
    Ok(files)
}

pub fn load_dataset(dir: &Path) -> Result<MILDataset> {
    let path = dir.join(DATASET_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let d = manifest.config.instance_dim;
    let mut out = MILDataset {
        config: manifest.config.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for entry in &manifest.bags {
        let path = dir.join(&entry.file);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bag = parse_bag_csv(&text, entry, d).map_err(|message| Error::Format {
            path: path.clone(),
            message,
        })?;
        match entry.split {
            Split::Train => out.train.push(bag),
            Split::Val => out.val.push(bag),
            Split::Test => out.test.push(bag),
        }
    }
    Ok(out)
}

fn parse_bag_csv(text: &str, entry: &BagEntry, d: usize) -> std::result::Result<Bag, String> {
    let mut lines = text.lines();
    lines.next().ok_or("empty file")?;
    let mut values = Vec::new();
    let mut truth = Vec::new();
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(format!("line {}: expected {} fields", ln + 2, d + 2));
        }
        let t: u8 = fields[1]
            .parse()
            .map_err(|_| format!("line {}: bad label", ln + 2))?;
        truth.push(Label::from_u8(t).ok_or(format!("line {}: bad label", ln + 2))?);
        for f in &fields[2..] {
            values.push(
                f.parse::<f64>()
                    .map_err(|_| format!("line {}: bad value", ln + 2))?,
            );
        }
    }
    if truth.len() != entry.n_instances {
        return Err(format!(
            "{} rows, manifest says {}",
            truth.len(),
            entry.n_instances
        ));
    }
    let instances = Matrix::new(truth.len(), d, values).map_err(|e| e.to_string())?;
    Ok(Bag {
        bag_id: entry.bag_id,
        bag_label: entry.bag_label,
        instances,
        true_instance_labels: truth,
    })
}
