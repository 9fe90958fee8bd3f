//! Abstraction state: replacement and exact restoration of neurons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::numerics::{Matrix, Vector};

/// Everything needed to undo the replacement of one neuron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplacementRecord {
    /// Activation layer (1-based hidden layer).
    pub layer: usize,
    pub neuron: usize,
    /// `(j, α_j)` for basis neurons `j` of the same layer.
    pub coefficients: Vec<(usize, f64)>,
    pub original_outgoing: Vector,
    pub original_incoming: Vector,
    pub original_bias: f64,
}

/// An abstracted network together with its link to the original.
///
/// Per-layer vectors are indexed by activation layer (0 = input), so only
/// the hidden entries `1..=hidden_layers` are ever non-empty. `deltas[l]`
/// has shape `width(l) × width(l + 1)` and accumulates
/// `α_{i,j} · w_{i′,i}` at `(j, i′)` for every active replacement in `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractionState {
    pub original: Network,
    pub current: Network,
    pub bases: Vec<Vec<usize>>,
    pub replaced: Vec<Vec<usize>>,
    pub records: Vec<ReplacementRecord>,
    pub deltas: Vec<Matrix>,
}

impl AbstractionState {
    pub fn new(net: &Network) -> Self {
        let depth = net.layers().len();
        Self {
            original: net.clone(),
            current: net.clone(),
            bases: vec![Vec::new(); depth + 1],
            replaced: vec![Vec::new(); depth + 1],
            records: Vec::new(),
            deltas: (0..depth)
                .map(|l| Matrix::zeros(net.width(l), net.width(l + 1)))
                .collect(),
        }
    }

    fn check_hidden(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.original.hidden_layers() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} is not a hidden layer (valid: 1..={})",
                self.original.hidden_layers()
            )));
        }
        Ok(())
    }

    pub fn is_replaced(&self, layer: usize, neuron: usize) -> bool {
        self.replaced[layer].binary_search(&neuron).is_ok()
    }

    pub fn in_basis(&self, layer: usize, neuron: usize) -> bool {
        self.bases[layer].binary_search(&neuron).is_ok()
    }

    /// Declares the basis of a hidden layer. It must not contain replaced
    /// neurons, and basis neurons that already carry folded weights can
    /// only be kept.
    pub fn set_basis(&mut self, layer: usize, mut basis: Vec<usize>) -> Result<()> {
        self.check_hidden(layer)?;
        basis.sort_unstable();
        basis.dedup();
        let width = self.original.width(layer);
        if let Some(&bad) = basis.iter().find(|&&j| j >= width || self.is_replaced(layer, j)) {
            return Err(Error::InvalidArgument(format!(
                "neuron {bad} of layer {layer} cannot join the basis"
            )));
        }
        for rec in self.records.iter().filter(|r| r.layer == layer) {
            if let Some(&(j, _)) = rec.coefficients.iter().find(|(j, _)| basis.binary_search(j).is_err()) {
                return Err(Error::InvalidArgument(format!(
                    "neuron {j} of layer {layer} represents replaced neuron {} and must stay in the basis",
                    rec.neuron
                )));
            }
        }
        self.bases[layer] = basis;
        Ok(())
    }

    /// Number of hidden neurons currently replaced.
    pub fn replaced_count(&self) -> usize {
        self.replaced.iter().map(Vec::len).sum()
    }

    /// `1 − remaining / original` over hidden neurons.
    pub fn reduction_rate(&self) -> f64 {
        let total = self.original.hidden_neurons();
        if total == 0 {
            return 0.0;
        }
        self.replaced_count() as f64 / total as f64
    }

    pub fn record(&self, layer: usize, neuron: usize) -> Option<&ReplacementRecord> {
        self.records.iter().find(|r| r.layer == layer && r.neuron == neuron)
    }

    /// Replaces `neuron` of `layer` by `Σ α_j z_j` over basis neurons:
    /// each basis column of the outgoing matrix gains `α_j` times the
    /// neuron's column, then the neuron's outgoing column and incoming row
    /// are zeroed.
    pub fn replace_neuron(&mut self, layer: usize, neuron: usize, coefficients: &[(usize, f64)]) -> Result<()> {
        self.check_hidden(layer)?;
        let width = self.original.width(layer);
        if neuron >= width {
            return Err(Error::InvalidArgument(format!("layer {layer} has no neuron {neuron}")));
        }
        if self.in_basis(layer, neuron) {
            return Err(Error::State(format!("neuron {neuron} of layer {layer} is in the basis")));
        }
        if self.is_replaced(layer, neuron) {
            return Err(Error::State(format!("neuron {neuron} of layer {layer} is already replaced")));
        }
        if let Some(&(j, _)) = coefficients.iter().find(|(j, _)| !self.in_basis(layer, *j)) {
            return Err(Error::State(format!("coefficient key {j} is not in the basis of layer {layer}")));
        }
        if coefficients.iter().any(|(_, a)| !a.is_finite()) {
            return Err(Error::NonFinite("coefficients"));
        }
        let original_out = self.original.layers()[layer].weights.column(neuron);
        let original_in = self.original.layers()[layer - 1].weights.row(neuron).to_vec();
        let original_bias = self.original.layers()[layer - 1].bias[neuron];

        let layers = self.current.layers_mut();
        let out = &mut layers[layer].weights;
        // the current column equals the original one except for rows of
        // replaced neurons in the next layer, which are zero
        let current_col = out.column(neuron);
        for &(j, a) in coefficients {
            for (r, &v) in current_col.iter().enumerate() {
                out[(r, j)] += a * v;
            }
        }
        out.set_column(neuron, &vec![0.0; out.rows()]);
        for v in layers[layer - 1].weights.row_mut(neuron) {
            *v = 0.0;
        }
        let d = &mut self.deltas[layer];
        for &(j, a) in coefficients {
            for (r, &w) in original_out.iter().enumerate() {
                d[(j, r)] += a * w;
            }
        }
        let pos = self.replaced[layer].binary_search(&neuron).unwrap_err();
        self.replaced[layer].insert(pos, neuron);
        self.records.push(ReplacementRecord {
            layer,
            neuron,
            coefficients: coefficients.to_vec(),
            original_outgoing: original_out,
            original_incoming: original_in,
            original_bias,
        });
        Ok(())
    }

    /// Exact inverse of `replace_neuron`, valid regardless of which other
    /// replacements happened in between.
    pub fn restore_neuron(&mut self, layer: usize, neuron: usize) -> Result<()> {
        self.check_hidden(layer)?;
        let Some(pos) = self.records.iter().position(|r| r.layer == layer && r.neuron == neuron) else {
            return Err(Error::State(format!(
                "neuron {neuron} of layer {layer} is not replaced"
            )));
        };
        let rec = self.records.remove(pos);
        let next_replaced = self.replaced[layer + 1].clone();
        let live = |r: &usize| next_replaced.binary_search(r).is_err();
        let prev_replaced = self.replaced[layer - 1].clone();
        let layers = self.current.layers_mut();

        let out = &mut layers[layer].weights;
        for &(j, a) in &rec.coefficients {
            for (r, &w) in rec.original_outgoing.iter().enumerate() {
                if live(&r) {
                    out[(r, j)] -= a * w;
                }
            }
        }
        for (r, &w) in rec.original_outgoing.iter().enumerate() {
            out[(r, neuron)] = if live(&r) { w } else { 0.0 };
        }

        let incoming = layers[layer - 1].weights.row_mut(neuron);
        for (j, v) in incoming.iter_mut().enumerate() {
            *v = if prev_replaced.binary_search(&j).is_ok() {
                0.0
            } else {
                rec.original_incoming[j] + self.deltas[layer - 1][(j, neuron)]
            };
        }
        layers[layer - 1].bias[neuron] = rec.original_bias;

        let d = &mut self.deltas[layer];
        for &(j, a) in &rec.coefficients {
            for (r, &w) in rec.original_outgoing.iter().enumerate() {
                d[(j, r)] -= a * w;
            }
        }
        let idx = self.replaced[layer].binary_search(&neuron).expect("record without replaced entry");
        self.replaced[layer].remove(idx);
        Ok(())
    }

    /// Recomputes every `D` matrix from the active records.
    pub fn rebuild_deltas(&self) -> Vec<Matrix> {
        let mut deltas: Vec<Matrix> = self
            .deltas
            .iter()
            .map(|d| Matrix::zeros(d.rows(), d.cols()))
            .collect();
        for rec in &self.records {
            for &(j, a) in &rec.coefficients {
                for (r, &w) in rec.original_outgoing.iter().enumerate() {
                    deltas[rec.layer][(j, r)] += a * w;
                }
            }
        }
        deltas
    }

    /// Hidden neurons that are neither in a basis nor replaced.
    pub fn untouched(&self, layer: usize) -> Vec<usize> {
        (0..self.original.width(layer))
            .filter(|&i| !self.in_basis(layer, i) && !self.is_replaced(layer, i))
            .collect()
    }

    /// The abstract network with replaced neurons physically removed.
    pub fn compact(&self) -> Result<Network> {
        let layers = self.current.layers();
        let keep: Vec<Vec<usize>> = (0..=layers.len())
            .map(|l| {
                (0..self.current.width(l))
                    .filter(|i| self.replaced[l].binary_search(i).is_err())
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let rows: Vec<Vec<f64>> = keep[l + 1]
                .iter()
                .map(|&i| keep[l].iter().map(|&j| layer.weights[(i, j)]).collect())
                .collect();
            let weights = if rows.is_empty() {
                Matrix::zeros(0, keep[l].len())
            } else {
                Matrix::from_rows(&rows)?
            };
            let bias = keep[l + 1].iter().map(|&i| layer.bias[i]).collect();
            out.push(crate::network::Layer::new(weights, bias, layer.activation)?);
        }
        Network::new(self.current.input_dim(), out)
    }
}
