use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::optim::Parameters;
use crate::rng::Rng;

/// Affine layer `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / input as f64).sqrt();
        let values = (0..input * output).map(|_| std * rng.normal()).collect();
        Self {
            weight: Matrix::from_raw(output, input, values),
            bias: vec![0.0; output],
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul_t(&self.weight)?;
        for i in 0..y.rows() {
            y.row_mut(i)
                .iter_mut()
                .zip(&self.bias)
                .for_each(|(v, b)| *v += b);
        }
        Ok(y)
    }
}

/// Stack of affine layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations kept for the backward pass: `inputs[l]` is the input of
/// layer `l` (post-ReLU for `l > 0`).
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
}

impl MlpCache {
    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }
}

impl Mlp {
    pub fn init(dims: &[usize], rng: &mut Rng) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| Linear::init(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(Linear::input_dim).collect();
        if let Some(last) = self.layers.last() {
            d.push(last.output_dim());
        }
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        for (l, w) in self.layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    w[0].output_dim(),
                    l + 1,
                    w[1].input_dim()
                )));
            }
        }
        for layer in &self.layers {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::ShapeMismatch("bias length".into()));
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.apply(&h)?;
            if l + 1 < self.layers.len() {
                y.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(h);
            h = y;
        }
        Ok((h, MlpCache { inputs }))
    }

    /// Returns parameter gradients and `∂L/∂input`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<(Mlp, Matrix)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::CacheMismatch(format!(
                "cache has {} layers, model has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        for (l, (inp, layer)) in cache.inputs.iter().zip(&self.layers).enumerate() {
            if inp.cols() != layer.input_dim() {
                return Err(Error::CacheMismatch(format!("layer {l} input width")));
            }
        }
        let rows = cache.inputs.first().map_or(0, Matrix::rows);
        if grad_out.shape() != (rows, self.output_dim()) {
            return Err(Error::CacheMismatch(format!(
                "upstream gradient {:?}, expected {:?}",
                grad_out.shape(),
                (rows, self.output_dim())
            )));
        }

        let mut grads: Vec<Linear> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let weight = delta.t_matmul(input)?;
            let mut bias = vec![0.0; layer.output_dim()];
            for r in delta.iter_rows() {
                bias.iter_mut().zip(r).for_each(|(b, g)| *b += g);
            }
            grads.push(Linear { weight, bias });
            let mut back = delta.matmul(&layer.weight)?;
            if l > 0 {
                // ReLU'(0) = 0; the cached input is post-ReLU so > 0 marks active units
                back.values_mut()
                    .iter_mut()
                    .zip(input.values())
                    .for_each(|(g, &a)| {
                        if a <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            delta = back;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, delta))
    }
}

impl Parameters for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.values(), l.bias.as_slice()])
            .collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.values_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}
