//! Small fully connected classifier: affine layers with rectifiers between them.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{DetectorError, Logits};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model needs at least an input and an output size")]
    TooFewLayers,
    #[error("layer sizes must be positive, got {0:?}")]
    ZeroWidth(Vec<usize>),
    #[error("input has {got} features, model expects {expected}")]
    InputDim { got: usize, expected: usize },
    #[error("parameter vector has {got} entries, model has {expected}")]
    ParamCount { got: usize, expected: usize },
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("layer {layer} has inconsistent shapes")]
    LayerShape { layer: usize },
    #[error(transparent)]
    Logits(#[from] DetectorError),
}

/// Affine map `z = W·a + b`; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
}

/// Per-layer outputs kept for the backward pass.
pub struct ForwardCache {
    /// `inputs[l]` is the activation fed into layer `l`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer; the last one is the logits.
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }
}

/// Gradient with the same layout as [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

impl MlpModel {
    fn check_sizes(sizes: &[usize]) -> Result<(), ModelError> {
        if sizes.len() < 2 {
            return Err(ModelError::TooFewLayers);
        }
        if sizes.contains(&0) {
            return Err(ModelError::ZeroWidth(sizes.to_vec()));
        }
        Ok(())
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, ModelError> {
        Self::check_sizes(sizes)?;
        Ok(MlpModel {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, ModelError> {
        let mut model = Self::zeros(sizes)?;
        for layer in &mut model.layers {
            let std = (2.0 / layer.input_dim() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            layer.weights.mapv_inplace(|_| normal.sample(rng));
        }
        Ok(model)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::output_dim));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.num_params() {
            return Err(ModelError::ParamCount {
                got: params.len(),
                expected: self.num_params(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Logits for one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Logits, ModelError> {
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let out = self.forward_batch(xs)?;
        Ok(Logits::new(out.row(0).to_vec())?)
    }

    /// Logits for a batch, one sample per row.
    pub fn forward_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        Ok(self.forward_cached(xs)?.pre.pop().expect("at least one layer"))
    }

    pub fn forward_cached(&self, xs: ArrayView2<f64>) -> Result<ForwardCache, ModelError> {
        if xs.ncols() != self.input_dim() {
            return Err(ModelError::InputDim {
                got: xs.ncols(),
                expected: self.input_dim(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = xs.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weights.t()) + &layer.bias;
            inputs.push(a);
            if i + 1 < self.layers.len() {
                a = z.mapv(|v| v.max(0.0));
            } else {
                a = Array2::zeros((0, 0));
            }
            pre.push(z);
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Backpropagate `d loss / d logits` through a cached forward pass.
    /// The rectifier's subgradient at exactly zero is taken as 0.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>) -> Gradients {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = dlogits.clone();
        for l in (0..self.layers.len()).rev() {
            let dw = dz.t().dot(&cache.inputs[l]);
            let db = dz.sum_axis(Axis(0));
            if l > 0 {
                let mut da = dz.dot(&self.layers[l].weights);
                ndarray::Zip::from(&mut da)
                    .and(&cache.pre[l - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
                dz = da;
            }
            grads.push(Dense { weights: dw, bias: db });
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Plain or momentum SGD step: `v = μ·v + g; θ -= lr·v`.
    pub fn apply_update(&mut self, grads: &Gradients, lr: f64, momentum: f64, velocity: &mut Option<Gradients>) {
        match velocity {
            Some(v) if momentum > 0.0 => {
                for ((p, g), vel) in self.layers.iter_mut().zip(&grads.layers).zip(&mut v.layers) {
                    vel.weights.zip_mut_with(&g.weights, |vv, &gg| *vv = momentum * *vv + gg);
                    vel.bias.zip_mut_with(&g.bias, |vv, &gg| *vv = momentum * *vv + gg);
                    p.weights.scaled_add(-lr, &vel.weights);
                    p.bias.scaled_add(-lr, &vel.bias);
                }
            }
            _ => {
                for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
                    p.weights.scaled_add(-lr, &g.weights);
                    p.bias.scaled_add(-lr, &g.bias);
                }
            }
        }
    }
}

/// On-disk JSON layout: version, layer sizes, then for each layer its
/// row-major `out × in` weights and its bias. An optional `provenance`
/// object is carried through untouched.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    sizes: Vec<usize>,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl MlpModel {
    pub fn to_json(&self) -> String {
        self.to_json_with(None)
    }

    pub fn to_json_with(&self, provenance: Option<serde_json::Value>) -> String {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            provenance,
            sizes: self.sizes(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Box::new(ModelError::Version(file.format_version)));
        }
        let mut model = MlpModel::zeros(&file.sizes)?;
        if file.layers.len() != model.layers.len() {
            return Err(Box::new(ModelError::LayerShape { layer: file.layers.len() }));
        }
        for (i, (dst, src)) in model.layers.iter_mut().zip(file.layers).enumerate() {
            if src.weights.len() != dst.weights.len() || src.bias.len() != dst.bias.len() {
                return Err(Box::new(ModelError::LayerShape { layer: i }));
            }
            dst.weights = Array2::from_shape_vec(dst.weights.raw_dim(), src.weights)?;
            dst.bias = Array1::from(src.bias);
        }
        Ok(model)
    }
}
