//! Feedforward networks: evaluation, semantics, accuracy and gradients.
//!
//! Layer indexing follows the activations: activation layer 0 is the input,
//! activation layer `l` (1-based) is produced by `layers[l - 1]`. Hidden
//! layers are `1..layers.len()`; the last layer produces logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, h: f64) -> f64 {
        match self {
            Activation::Relu => h.max(0.0),
            Activation::Identity => h,
        }
    }

    /// Derivative, with the ReLU subgradient at 0 taken as 0.
    #[inline]
    pub fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `weights[(i, j)]` connects neuron `j` of the previous layer to neuron `i`.
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Dimension(format!(
                "bias has length {}, weights have {} rows",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("bias"));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn pre_activation(&self, x: &[f64]) -> Vector {
        let mut h = self.weights.matvec(x);
        axpy(1.0, &self.bias, &mut h);
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

#[derive(Deserialize)]
struct RawNetwork {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl TryFrom<RawNetwork> for Network {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        Network::new(raw.input_dim, raw.layers)
    }
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        };
        if last.activation != Activation::Identity {
            return Err(Error::InvalidArgument("output layer must use the identity activation".into()));
        }
        let mut width = input_dim;
        for (l, layer) in layers.iter().enumerate() {
            if layer.inputs() != width {
                return Err(Error::Dimension(format!(
                    "layer {l} expects {} inputs, previous width is {width}",
                    layer.inputs()
                )));
            }
            if layer.bias.len() != layer.outputs() {
                return Err(Error::Dimension(format!(
                    "layer {l}: bias has length {}, weights have {} rows",
                    layer.bias.len(),
                    layer.outputs()
                )));
            }
            width = layer.outputs();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access for in-place weight edits that keep all shapes.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    /// Number of activation layers that are hidden.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Width of activation layer `l` (0 = input).
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.layers[l - 1].outputs()
        }
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        (1..self.layers.len()).map(|l| self.width(l)).collect()
    }

    pub fn hidden_neurons(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len() + 1);
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        pre.push(x.to_vec());
        post.push(x.to_vec());
        for layer in &self.layers {
            let h = layer.pre_activation(post.last().unwrap());
            let z = h.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(h);
            post.push(z);
        }
        Ok(Forward { pre, post })
    }

    /// Output logits without keeping intermediate activations.
    pub fn logits(&self, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        let mut z = x.to_vec();
        for layer in &self.layers {
            let mut h = layer.pre_activation(&z);
            for v in &mut h {
                *v = layer.activation.apply(*v);
            }
            z = h;
        }
        Ok(z)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Activation matrix of one layer over `inputs` (rows = neurons).
    pub fn semantics(&self, inputs: &[Vector], layer: usize) -> Result<SemanticsMatrix> {
        if layer > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range (network has {} activation layers)",
                self.layers.len() + 1
            )));
        }
        let all = self.all_semantics(inputs)?;
        Ok(all.into_iter().nth(layer).unwrap())
    }

    /// Activation matrices of every layer, input included, from one pass.
    pub fn all_semantics(&self, inputs: &[Vector]) -> Result<Vec<SemanticsMatrix>> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("semantics over an empty input set".into()));
        }
        let n = inputs.len();
        let mut values: Vec<Matrix> = (0..=self.layers.len())
            .map(|l| Matrix::zeros(self.width(l), n))
            .collect();
        for (c, x) in inputs.iter().enumerate() {
            let fwd = self.forward(x)?;
            for (m, z) in values.iter_mut().zip(&fwd.post) {
                m.set_column(c, z);
            }
        }
        Ok(values
            .into_iter()
            .enumerate()
            .map(|(layer, values)| SemanticsMatrix { layer, values })
            .collect())
    }
}

/// Pre-activations `h` and activations `z` of every layer; index 0 holds
/// the input in both.
#[derive(Clone, Debug)]
pub struct Forward {
    pub pre: Vec<Vector>,
    pub post: Vec<Vector>,
}

impl Forward {
    pub fn logits(&self) -> &[f64] {
        self.post.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticsMatrix {
    pub layer: usize,
    /// `values[(i, c)]` is the activation of neuron `i` on input `c`.
    pub values: Matrix,
}

#[derive(Clone, Debug, Default)]
pub struct LabeledDataset {
    pub inputs: Vec<Vector>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vector>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// The first `n` examples.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples whose argmax logit equals the label.
pub fn accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("accuracy over an empty dataset".into()));
    }
    let mut correct = 0usize;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        if net.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn softmax(logits: &[f64]) -> Vector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vector = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss between the logits of a network under study and a reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Cross-entropy of `softmax(logits)` against the reference's argmax label.
    #[default]
    CrossEntropy,
    /// Mean squared difference of the logit vectors.
    MeanSquared,
}

impl Loss {
    pub fn value(self, logits: &[f64], reference: &[f64]) -> f64 {
        match self {
            Loss::CrossEntropy => cross_entropy(logits, argmax(reference)).0,
            Loss::MeanSquared => {
                let n = logits.len() as f64;
                logits.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
            }
        }
    }

    /// Gradient of `value` with respect to `logits`.
    pub fn gradient(self, logits: &[f64], reference: &[f64]) -> Vector {
        match self {
            Loss::CrossEntropy => cross_entropy(logits, argmax(reference)).1,
            Loss::MeanSquared => {
                let n = logits.len() as f64;
                logits.iter().zip(reference).map(|(a, b)| 2.0 * (a - b) / n).collect()
            }
        }
    }
}

/// Cross-entropy of `softmax(logits)` against `label` and its gradient
/// with respect to the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vector) {
    let mut p = softmax(logits);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    p[label] -= 1.0;
    (loss, p)
}

/// Per-layer gradients, aligned with `Network::layers`.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

/// Reverse accumulation from `dlogits` (the loss gradient w.r.t. the logits).
pub fn backprop(net: &Network, fwd: &Forward, dlogits: &[f64]) -> Gradients {
    let layers = net.layers();
    let mut weights = Vec::with_capacity(layers.len());
    let mut biases = Vec::with_capacity(layers.len());
    // dz: gradient w.r.t. the activations of the current layer
    let mut dz = dlogits.to_vec();
    for (l, layer) in layers.iter().enumerate().rev() {
        let h = &fwd.pre[l + 1];
        let delta: Vector = dz
            .iter()
            .zip(h)
            .map(|(g, &hv)| g * layer.activation.derivative(hv))
            .collect();
        let input = &fwd.post[l];
        let mut gw = Matrix::zeros(layer.outputs(), layer.inputs());
        for (i, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                axpy(d, input, gw.row_mut(i));
            }
        }
        let mut dprev = vec![0.0; layer.inputs()];
        for (i, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                axpy(d, layer.weights.row(i), &mut dprev);
            }
        }
        weights.push(gw);
        biases.push(delta);
        dz = dprev;
    }
    weights.reverse();
    biases.reverse();
    Gradients { weights, biases }
}

/// Gradients of the cross-entropy loss for one labelled example.
pub fn weight_gradients(net: &Network, x: &[f64], label: usize) -> Result<Gradients> {
    if label >= net.output_dim() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} outputs",
            net.output_dim()
        )));
    }
    let fwd = net.forward(x)?;
    let (_, dlogits) = cross_entropy(fwd.logits(), label);
    Ok(backprop(net, &fwd, &dlogits))
}
