//! Minibatch SGD trainer for fully connected ReLU classifiers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{accuracy, cross_entropy, Activation, LabeledDataset, Layer, Network};
use crate::numerics::{axpy, dot, Matrix, Vector};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Hidden layer widths, e.g. `[100, 100, 100]`.
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100, 100],
            classes: 10,
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Mean cross-entropy over each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Glorot-uniform weights, zero biases.
pub fn glorot_init(input_dim: usize, hidden: &[usize], classes: usize, rng: &mut impl Rng) -> Result<Network> {
    let mut widths = vec![input_dim];
    widths.extend_from_slice(hidden);
    widths.push(classes);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for (l, w) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
        let activation = if l + 2 == widths.len() {
            Activation::Identity
        } else {
            Activation::Relu
        };
        layers.push(Layer::new(Matrix::new(fan_out, fan_in, data)?, vec![0.0; fan_out], activation)?);
    }
    Network::new(input_dim, layers)
}

/// Working copy of the parameters; the first layer is kept input-major so
/// that sparse inputs (most MNIST pixels are zero) touch only their rows.
struct Params {
    first_t: Matrix,
    rest: Vec<Matrix>,
    biases: Vec<Vector>,
}

impl Params {
    fn from_network(net: &Network) -> Self {
        let layers = net.layers();
        Self {
            first_t: layers[0].weights.transpose(),
            rest: layers[1..].iter().map(|l| l.weights.clone()).collect(),
            biases: layers.iter().map(|l| l.bias.clone()).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            first_t: Matrix::zeros(self.first_t.rows(), self.first_t.cols()),
            rest: self.rest.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn into_network(self, template: &Network) -> Result<Network> {
        let mut weights = vec![self.first_t.transpose()];
        weights.extend(self.rest);
        let layers = weights
            .into_iter()
            .zip(self.biases)
            .zip(template.layers())
            .map(|((w, b), t)| Layer::new(w, b, t.activation))
            .collect::<Result<Vec<_>>>()?;
        Network::new(template.input_dim(), layers)
    }
}

/// Accumulates the gradient of one example into `grad`; returns its loss.
fn accumulate(p: &Params, grad: &mut Params, x: &[f64], label: usize) -> f64 {
    let nz: Vec<(usize, f64)> = x.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect();
    let depth = p.biases.len();
    // forward, keeping post-activations (ReLU everywhere but the last layer)
    let mut acts: Vec<Vector> = Vec::with_capacity(depth);
    let mut h = p.biases[0].clone();
    for &(j, v) in &nz {
        axpy(v, p.first_t.row(j), &mut h);
    }
    for l in 0..depth {
        if l > 0 {
            let prev = &acts[l - 1];
            let w = &p.rest[l - 1];
            h = (0..w.rows()).map(|i| dot(w.row(i), prev) + p.biases[l][i]).collect();
        }
        if l + 1 < depth {
            for v in &mut h {
                *v = v.max(0.0);
            }
        }
        acts.push(std::mem::take(&mut h));
    }
    let (loss, mut delta) = cross_entropy(&acts[depth - 1], label);
    for l in (0..depth).rev() {
        axpy(1.0, &delta, &mut grad.biases[l]);
        if l == 0 {
            for &(j, v) in &nz {
                axpy(v, &delta, grad.first_t.row_mut(j));
            }
            break;
        }
        let input = &acts[l - 1];
        let w = &p.rest[l - 1];
        let gw = &mut grad.rest[l - 1];
        let mut dprev = vec![0.0; w.cols()];
        for (i, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                axpy(d, input, gw.row_mut(i));
                axpy(d, w.row(i), &mut dprev);
            }
        }
        // ReLU derivative through the stored activation (zero at the kink)
        for (g, &a) in dprev.iter_mut().zip(input) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        delta = dprev;
    }
    loss
}

fn apply(p: &mut Params, grad: &mut Params, step: f64) {
    fn upd(dst: &mut [f64], g: &mut [f64], step: f64) {
        for (d, gv) in dst.iter_mut().zip(g.iter_mut()) {
            *d -= step * *gv;
            *gv = 0.0;
        }
    }
    let rows = p.first_t.rows();
    for r in 0..rows {
        upd(p.first_t.row_mut(r), grad.first_t.row_mut(r), step);
    }
    for (w, g) in p.rest.iter_mut().zip(grad.rest.iter_mut()) {
        for r in 0..w.rows() {
            upd(w.row_mut(r), g.row_mut(r), step);
        }
    }
    for (b, g) in p.biases.iter_mut().zip(grad.biases.iter_mut()) {
        upd(b, g, step);
    }
}

/// Trains a classifier with cross-entropy loss. Deterministic for a fixed
/// seed; zero epochs returns the seeded initialization.
pub fn train_mlp(
    data: &LabeledDataset,
    config: &TrainConfig,
    test: Option<&LabeledDataset>,
) -> Result<(Network, TrainReport)> {
    let Some(first) = data.inputs.first() else {
        return Err(Error::InvalidArgument("training set is empty".into()));
    };
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= config.classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            config.classes
        )));
    }
    let input_dim = first.len();
    if data.inputs.iter().any(|x| x.len() != input_dim) {
        return Err(Error::Dimension("training inputs differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let template = glorot_init(input_dim, &config.hidden, config.classes, &mut rng)?;
    let mut params = Params::from_network(&template);
    let mut grad = params.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            for &s in batch {
                total += accumulate(&params, &mut grad, &data.inputs[s], data.labels[s]);
            }
            apply(&mut params, &mut grad, config.learning_rate / batch.len() as f64);
        }
        let mean = total / data.len() as f64;
        log::info!("epoch {}: mean loss {mean:.4}", epoch + 1);
        epoch_losses.push(mean);
    }
    let net = params.into_network(&template)?;
    let train_accuracy = accuracy(&net, data)?;
    let test_accuracy = test.map(|t| accuracy(&net, t)).transpose()?;
    Ok((
        net,
        TrainReport {
            train_accuracy,
            test_accuracy,
            epoch_losses,
        },
    ))
}
