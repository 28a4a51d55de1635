//! A small MLP split into a feature extractor and a classifier head.
//!
//! The feature extractor maps raw inputs to `d`-dimensional embeddings
//! (ReLU between hidden layers, linear output). The head is a single linear
//! layer from embeddings to class logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy;
use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

/// Dense layer `y = act(x Wᵀ + b)`; `weights` has shape `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let scale = 1.0 / (input as f64).sqrt();
        let mut draw = || (rng.random::<f64>() * 2.0 - 1.0) * scale;
        let weights: Vec<f64> = (0..input * output).map(|_| draw()).collect();
        let bias: Vec<f64> = (0..output).map(|_| draw()).collect();
        Dense {
            weights: Matrix::from_vec(output, input, weights).expect("shape by construction"),
            bias,
            activation,
        }
    }

    fn forward(&self, input: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut pre = input.matmul_transposed(&self.weights)?;
        for r in 0..pre.rows() {
            for (z, b) in pre.row_mut(r).iter_mut().zip(&self.bias) {
                *z += b;
            }
        }
        let mut out = pre.clone();
        if self.activation == Activation::Relu {
            for v in out.as_mut_slice() {
                *v = v.max(0.0);
            }
        }
        Ok((pre, out))
    }
}

/// Feature extractor `phi` plus decision head `varphi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub phi: Vec<Dense>,
    pub head: Dense,
}

/// Per-parameter gradients, shaped like the [`Model`] they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub phi: Vec<LayerGrad>,
    pub head: LayerGrad,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &Dense) -> Self {
        LayerGrad {
            weights: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }
}

/// A training batch: `inputs` rows paired with `labels`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "batch has {} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Data("batch must contain at least one sample".into()));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Cached activations from one forward pass, consumed by [`Model::backprop`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    layer_inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    pub embeddings: Matrix,
    pub logits: Matrix,
}

/// Build a model whose feature extractor walks `layer_dims` (input width
/// first, embedding width last) and whose head maps to `num_classes` logits.
///
/// `layer_dims = [4, 8]` with `embedding_dim = 8` is a single linear feature
/// layer 4→8 followed by the 8→classes head.
pub fn init_model(
    layer_dims: &[usize],
    embedding_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Model> {
    if layer_dims.len() < 2 {
        return Err(Error::config(
            "model.layer_dims",
            "need at least an input and an embedding width",
        ));
    }
    if let Some(pos) = layer_dims.iter().position(|&d| d == 0) {
        return Err(Error::config(
            "model.layer_dims",
            format!("dimension at position {pos} must be positive"),
        ));
    }
    if embedding_dim == 0 {
        return Err(Error::config("model.embedding_dim", "must be positive"));
    }
    if num_classes == 0 {
        return Err(Error::config("data.num_classes", "must be positive"));
    }
    if *layer_dims.last().unwrap() != embedding_dim {
        return Err(Error::config(
            "model.layer_dims",
            format!(
                "last width {} must equal the embedding dimension {embedding_dim}",
                layer_dims.last().unwrap()
            ),
        ));
    }

    let mut rng = rng::stream(seed, "model/init");
    let n_phi = layer_dims.len() - 1;
    let phi = layer_dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 1 == n_phi {
                Activation::Identity
            } else {
                Activation::Relu
            };
            Dense::init(w[0], w[1], act, &mut rng)
        })
        .collect();
    let head = Dense::init(embedding_dim, num_classes, Activation::Identity, &mut rng);
    Ok(Model { phi, head })
}

impl Model {
    pub fn input_dim(&self) -> usize {
        self.phi[0].in_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    /// Feature layers followed by the head.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.phi.iter().chain(std::iter::once(&self.head))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.phi.iter_mut().chain(std::iter::once(&mut self.head))
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// All parameters flattened in layer order (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Feature-extractor parameters only, flattened like [`Self::flat_params`].
    pub fn flat_phi_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.phi {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "{} parameters supplied for a model with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut rest = params;
        for l in self.layers_mut() {
            let (w, tail) = rest.split_at(l.weights.as_slice().len());
            l.weights.as_mut_slice().copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, inputs: &Matrix, expected: usize, what: &str) -> Result<()> {
        if inputs.cols() != expected {
            return Err(Error::Dimension(format!(
                "{what} has {} columns, model expects {expected}",
                inputs.cols()
            )));
        }
        Ok(())
    }

    /// Embeddings `h = f(phi, x)` for every input row.
    pub fn forward_features(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs, self.input_dim(), "input")?;
        let mut x = inputs.clone();
        for layer in &self.phi {
            x = layer.forward(&x)?.1;
        }
        Ok(x)
    }

    /// Logits `g(varphi, h)` for every embedding row.
    pub fn forward_logits(&self, embeddings: &Matrix) -> Result<Matrix> {
        self.check_input(embeddings, self.embedding_dim(), "embedding")?;
        Ok(self.head.forward(embeddings)?.1)
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardPass> {
        self.check_input(inputs, self.input_dim(), "input")?;
        let mut layer_inputs = Vec::with_capacity(self.phi.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.phi.len() + 1);
        let mut x = inputs.clone();
        for layer in &self.phi {
            let (pre, out) = layer.forward(&x)?;
            layer_inputs.push(x);
            pre_activations.push(pre);
            x = out;
        }
        let embeddings = x;
        let (pre, logits) = self.head.forward(&embeddings)?;
        layer_inputs.push(embeddings.clone());
        pre_activations.push(pre);
        Ok(ForwardPass {
            layer_inputs,
            pre_activations,
            embeddings,
            logits,
        })
    }

    /// Backpropagate `grad_logits` (and optionally an extra gradient arriving
    /// directly at the embeddings) through the cached `pass`.
    pub fn backprop(
        &self,
        pass: &ForwardPass,
        grad_logits: &Matrix,
        grad_embedding: Option<&Matrix>,
    ) -> Result<Gradients> {
        let batch = pass.logits.rows();
        if grad_logits.rows() != batch || grad_logits.cols() != self.num_classes() {
            return Err(Error::Dimension(format!(
                "logit gradient is {}x{}, expected {batch}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                self.num_classes()
            )));
        }
        if let Some(extra) = grad_embedding {
            if extra.rows() != batch || extra.cols() != self.embedding_dim() {
                return Err(Error::Dimension(format!(
                    "embedding gradient is {}x{}, expected {batch}x{}",
                    extra.rows(),
                    extra.cols(),
                    self.embedding_dim()
                )));
            }
        }

        let n = self.phi.len();
        let head = LayerGrad {
            weights: grad_logits.transposed_matmul(&pass.layer_inputs[n])?,
            bias: grad_logits.column_sums(),
        };
        let mut upstream = grad_logits.matmul(&self.head.weights)?;
        if let Some(extra) = grad_embedding {
            upstream.add_assign(extra)?;
        }

        let mut phi = Vec::with_capacity(n);
        for (i, layer) in self.phi.iter().enumerate().rev() {
            let mut dz = upstream;
            if layer.activation == Activation::Relu {
                for (g, z) in dz
                    .as_mut_slice()
                    .iter_mut()
                    .zip(pass.pre_activations[i].as_slice())
                {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            phi.push(LayerGrad {
                weights: dz.transposed_matmul(&pass.layer_inputs[i])?,
                bias: dz.column_sums(),
            });
            upstream = if i > 0 {
                dz.matmul(&layer.weights)?
            } else {
                Matrix::zeros(0, 0)
            };
        }
        phi.reverse();
        Ok(Gradients { phi, head })
    }
}

/// Gradients of the mean cross-entropy on `batch`, plus the chain-rule
/// contribution of `extra_grad_on_embedding` (the gradient of an
/// embedding-level regularizer), which only reaches the feature extractor.
pub fn backward(
    model: &Model,
    batch: &Batch,
    extra_grad_on_embedding: Option<&Matrix>,
) -> Result<Gradients> {
    let pass = model.forward(&batch.inputs)?;
    let (_, grad_logits) = cross_entropy(&pass.logits, &batch.labels)?;
    model.backprop(&pass, &grad_logits, extra_grad_on_embedding)
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            phi: model.phi.iter().map(LayerGrad::zeros_like).collect(),
            head: LayerGrad::zeros_like(&model.head),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerGrad> {
        self.phi.iter().chain(std::iter::once(&self.head))
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGrad> {
        self.phi.iter_mut().chain(std::iter::once(&mut self.head))
    }

    /// Flattened in the same order as [`Model::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub(crate) fn matches(&self, model: &Model) -> bool {
        self.phi.len() == model.phi.len()
            && self.layers().zip(model.layers()).all(|(g, l)| {
                g.weights.rows() == l.weights.rows()
                    && g.weights.cols() == l.weights.cols()
                    && g.bias.len() == l.bias.len()
            })
    }
}

impl Model {
    pub(crate) fn zip_layers_mut<'a>(
        &'a mut self,
        grads: &'a Gradients,
    ) -> impl Iterator<Item = (&'a mut Dense, &'a LayerGrad)> {
        self.layers_mut().zip(grads.layers())
    }
}
