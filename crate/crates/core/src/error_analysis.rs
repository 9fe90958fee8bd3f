//! Closed-form output-error bound and empirical error statistics.

use serde::{Deserialize, Serialize};

use crate::abstraction::AbstractionState;
use crate::error::Result;
use crate::numerics::{matrix_one_norm, norm1, norm_inf, Matrix, Vector};

/// How the vector `Σ_i W_{*,i} Σ_t α_{i,t}` is reduced to the scalar η.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaNorm {
    #[default]
    L1,
    MaxAbs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerBound {
    /// Activation layer; weight norms belong to the matrix leaving it.
    pub layer: usize,
    pub epsilon: f64,
    pub eta: f64,
    pub lambda: f64,
    pub weight_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub layers: Vec<LayerBound>,
    pub epsilon: f64,
    pub eta: f64,
    pub lambda: f64,
    pub weight_norm: f64,
    pub a: f64,
    pub b: f64,
    /// Number of activation layers, input and output included.
    pub depth: usize,
    pub bound: f64,
    /// Largest L1 distance between original and abstract logits over the inputs.
    pub empirical: f64,
}

/// Activations of the original network, one matrix per activation layer.
fn original_activations(state: &AbstractionState, inputs: &[Vector]) -> Result<Vec<Matrix>> {
    Ok(state.original.all_semantics(inputs)?.into_iter().map(|s| s.values).collect())
}

/// `|z_i(x) − Σ α_j z_j(x)|` for every replaced neuron of `layer`
/// (records in order) and every input column of `z`.
fn layer_differences(state: &AbstractionState, layer: usize, z: &Matrix) -> Vec<((usize, usize), Vector)> {
    state
        .records
        .iter()
        .filter(|r| r.layer == layer)
        .map(|r| {
            let diffs = (0..z.cols())
                .map(|c| {
                    let comb: f64 = r.coefficients.iter().map(|&(j, a)| a * z[(j, c)]).sum();
                    (z[(r.neuron, c)] - comb).abs()
                })
                .collect();
            ((r.layer, r.neuron), diffs)
        })
        .collect()
}

fn epsilon_from(state: &AbstractionState, layer: usize, z: &Matrix) -> f64 {
    layer_differences(state, layer, z)
        .iter()
        .flat_map(|(_, d)| d.iter().copied())
        .fold(0.0, f64::max)
}

/// Largest representation error of a replaced neuron of `layer` over the
/// inputs, measured on original activations.
pub fn epsilon_layer(state: &AbstractionState, inputs: &[Vector], layer: usize) -> Result<f64> {
    if state.records.iter().all(|r| r.layer != layer) {
        return Ok(0.0);
    }
    let z = state.original.semantics(inputs, layer)?;
    Ok(epsilon_from(state, layer, &z.values))
}

/// Norm of `Σ_{i ∈ I} W_{*,i} Σ_t α_{i,t}` with the original outgoing columns.
pub fn eta_layer(state: &AbstractionState, layer: usize, norm: EtaNorm) -> f64 {
    let mut v: Option<Vector> = None;
    for r in state.records.iter().filter(|r| r.layer == layer) {
        let s: f64 = r.coefficients.iter().map(|&(_, a)| a).sum();
        let acc = v.get_or_insert_with(|| vec![0.0; r.original_outgoing.len()]);
        for (a, w) in acc.iter_mut().zip(&r.original_outgoing) {
            *a += s * w;
        }
    }
    match (v, norm) {
        (None, _) => 0.0,
        (Some(v), EtaNorm::L1) => norm1(&v),
        (Some(v), EtaNorm::MaxAbs) => norm_inf(&v),
    }
}

/// Evaluates `b (1 − a^{L−1}) / (1 − a)` with its limit `b (L − 1)` at `a = 1`.
pub fn closed_form_bound(a: f64, b: f64, depth: usize) -> f64 {
    let n = depth.saturating_sub(1) as i32;
    if (a - 1.0).abs() < 1e-12 {
        b * f64::from(n)
    } else {
        b * (1.0 - a.powi(n)) / (1.0 - a)
    }
}

pub fn theorem_bound(state: &AbstractionState, inputs: &[Vector], norm: EtaNorm) -> Result<BoundReport> {
    let acts = original_activations(state, inputs)?;
    let net = &state.original;
    let layers: Vec<LayerBound> = (0..net.layers().len())
        .map(|l| LayerBound {
            layer: l,
            epsilon: if l == 0 { 0.0 } else { epsilon_from(state, l, &acts[l]) },
            eta: eta_layer(state, l, norm),
            lambda: net.layers()[l].activation.lipschitz(),
            weight_norm: matrix_one_norm(&net.layers()[l].weights),
        })
        .collect();
    let max = |f: fn(&LayerBound) -> f64| layers.iter().map(f).fold(0.0, f64::max);
    let epsilon = max(|l| l.epsilon);
    let eta = max(|l| l.eta);
    let lambda = max(|l| l.lambda);
    let weight_norm = max(|l| l.weight_norm);
    let a = lambda * (weight_norm + eta);
    let b = lambda * weight_norm * epsilon;
    let depth = net.layers().len() + 1;
    let mut empirical = 0.0f64;
    for x in inputs {
        let y = net.logits(x)?;
        let yt = state.current.logits(x)?;
        let d: f64 = y.iter().zip(&yt).map(|(p, q)| (p - q).abs()).sum();
        empirical = empirical.max(d);
    }
    Ok(BoundReport {
        layers,
        epsilon,
        eta,
        lambda,
        weight_norm,
        a,
        b,
        depth,
        bound: closed_form_bound(a, b, depth),
        empirical,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronRelativeError {
    pub layer: usize,
    pub neuron: usize,
    /// Largest representation error over the training inputs.
    pub denominator: f64,
    /// No representation error on the training inputs; no ratios reported.
    pub exact: bool,
    pub max: f64,
    pub geometric_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrorStats {
    pub neurons: Vec<NeuronRelativeError>,
}

impl RelativeErrorStats {
    pub fn inexact(&self) -> impl Iterator<Item = &NeuronRelativeError> {
        self.neurons.iter().filter(|n| !n.exact)
    }

    pub fn median_geometric_mean(&self) -> Option<f64> {
        let mut g: Vec<f64> = self.inexact().map(|n| n.geometric_mean).collect();
        if g.is_empty() {
            return None;
        }
        g.sort_by(f64::total_cmp);
        let m = g.len() / 2;
        Some(if g.len() % 2 == 1 { g[m] } else { 0.5 * (g[m - 1] + g[m]) })
    }

    pub fn fraction_max_above_one(&self) -> f64 {
        let n = self.inexact().count();
        if n == 0 {
            return 0.0;
        }
        self.inexact().filter(|e| e.max > 1.0).count() as f64 / n as f64
    }
}

/// Per replaced neuron: representation error on each test input divided
/// by the largest representation error on the training inputs.
pub fn relative_error_stats(state: &AbstractionState, train: &[Vector], test: &[Vector]) -> Result<RelativeErrorStats> {
    let train_acts = original_activations(state, train)?;
    let test_acts = original_activations(state, test)?;
    let mut neurons = Vec::new();
    for layer in 1..=state.original.hidden_layers() {
        let denoms = layer_differences(state, layer, &train_acts[layer]);
        let nums = layer_differences(state, layer, &test_acts[layer]);
        for ((key, d), (_, t)) in denoms.into_iter().zip(nums) {
            let denominator = d.into_iter().fold(0.0, f64::max);
            let exact = denominator == 0.0;
            let (max, geometric_mean) = if exact {
                (0.0, 0.0)
            } else {
                let rel: Vec<f64> = t.iter().map(|v| v / denominator).collect();
                let max = rel.iter().copied().fold(0.0, f64::max);
                let log_mean = rel.iter().map(|r| r.max(f64::EPSILON).ln()).sum::<f64>() / rel.len() as f64;
                (max, log_mean.exp())
            };
            neurons.push(NeuronRelativeError {
                layer: key.0,
                neuron: key.1,
                denominator,
                exact,
                max,
                geometric_mean,
            });
        }
    }
    Ok(RelativeErrorStats { neurons })
}
