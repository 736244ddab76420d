//! MLP encoder with a projection head, and its contrastive pre-training.

mod mlp;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use mlp::{Linear, Mlp, MlpCache};
pub use train::{
    cosine_diagnostics, extract_features, make_batch, pretrain, split_cosine_diagnostics,
    train_step, CosineDiagnostics, FeatureSource, FeatureTable, InstancePool, PretrainConfig,
    PretrainLog, TrainingBatch,
};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::numerics::Matrix;
use crate::optim::Parameters;
use crate::rng::Rng;

/// Layer widths of the trunk and the projection head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub trunk_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden: Vec<usize>,
    pub projection_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            trunk_hidden: vec![64],
            feature_dim: 64,
            head_hidden: vec![32],
            projection_dim: 16,
        }
    }
}

impl Architecture {
    pub fn trunk_dims(&self, input: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.trunk_hidden);
        d.push(self.feature_dim);
        d
    }

    pub fn head_dims(&self) -> Vec<usize> {
        let mut d = vec![self.feature_dim];
        d.extend(&self.head_hidden);
        d.push(self.projection_dim);
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    /// Produces the features used downstream.
    pub trunk: Mlp,
    /// Maps features to the space the contrastive loss sees.
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    trunk: MlpCache,
    head: MlpCache,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Matrix,
    pub projections: Matrix,
    pub cache: ForwardCache,
}

impl EncoderModel {
    pub fn init(input_dim: usize, arch: &Architecture, rng: &mut Rng) -> Self {
        Self {
            trunk: Mlp::init(&arch.trunk_dims(input_dim), rng),
            head: Mlp::init(&arch.head_dims(), rng),
        }
    }

    pub fn zeros(input_dim: usize, arch: &Architecture) -> Self {
        Self {
            trunk: Mlp::zeros(&arch.trunk_dims(input_dim)),
            head: Mlp::zeros(&arch.head_dims()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn projection_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk.validate()?;
        self.head.validate()?;
        if self.trunk.output_dim() != self.head.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "trunk emits {} features, head expects {}",
                self.trunk.output_dim(),
                self.head.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        let (features, trunk) = self.trunk.forward(x)?;
        let (projections, head) = self.head.forward(&features)?;
        Ok(Forward {
            features,
            projections,
            cache: ForwardCache { trunk, head },
        })
    }

    /// Parameter gradients given `∂L/∂projections`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_projections: &Matrix,
    ) -> Result<EncoderModel> {
        let (head, grad_features) = self.head.backward(&cache.head, grad_projections)?;
        let (trunk, _) = self.trunk.backward(&cache.trunk, &grad_features)?;
        Ok(EncoderModel { trunk, head })
    }
}

impl Parameters for EncoderModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.trunk.param_slices();
        v.extend(self.head.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.trunk.param_slices_mut();
        v.extend(self.head.param_slices_mut());
        v
    }
}

pub const CHECKPOINT_FORMAT: &str = "weaksupcon-encoder/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDims {
    pub trunk: Vec<usize>,
    pub head: Vec<usize>,
    pub feature_dim: usize,
    pub projection_dim: usize,
}

/// On-disk encoder: dims plus flat row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub loss_kind: LossKind,
    pub seed: u64,
    pub dims: CheckpointDims,
    pub model: EncoderModel,
}

impl Checkpoint {
    pub fn new(model: EncoderModel, loss_kind: LossKind, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            loss_kind,
            seed,
            dims: CheckpointDims {
                trunk: model.trunk.dims(),
                head: model.head.dims(),
                feature_dim: model.feature_dim(),
                projection_dim: model.projection_dim(),
            },
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let json = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if ck.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown checkpoint format {:?}", ck.format)));
        }
        ck.model.validate().map_err(|e| bad(e.to_string()))?;
        if ck.dims.trunk != ck.model.trunk.dims() || ck.dims.head != ck.model.head.dims() {
            return Err(bad("dims do not match parameter arrays".into()));
        }
        Ok(ck)
    }
}
