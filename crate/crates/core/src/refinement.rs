//! Counterexample-guided refinement by restoring replaced neurons.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::abstraction::AbstractionState;
use crate::error::Result;
use crate::network::{argmax, backprop, LabeledDataset, Loss};
use crate::numerics::{dot, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct Counterexample {
    /// Position in the scanned dataset.
    pub index: usize,
    pub input: Vector,
    pub original_label: usize,
    pub abstract_label: usize,
}

/// Inputs on which the abstraction and the original disagree, in dataset order.
pub fn find_counterexamples(state: &AbstractionState, data: &LabeledDataset) -> Result<Vec<Counterexample>> {
    let mut out = Vec::new();
    for (index, x) in data.inputs.iter().enumerate() {
        let original_label = state.original.predict(x)?;
        let abstract_label = state.current.predict(x)?;
        if original_label != abstract_label {
            out.push(Counterexample {
                index,
                input: x.clone(),
                original_label,
                abstract_label,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    #[default]
    Difference,
    Gradient,
    Lookahead,
}

#[derive(Clone, Debug)]
pub struct RefinementConfig {
    pub heuristic: Heuristic,
    /// Maximum number of restorations.
    pub budget: usize,
    /// Step size of the simulated gradient step.
    pub learning_rate: f64,
    pub loss: Loss,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            heuristic: Heuristic::Difference,
            budget: usize::MAX,
            learning_rate: 0.01,
            loss: Loss::CrossEntropy,
        }
    }
}

/// Score per replaced neuron, ordered by `(layer, neuron)`.
pub type Scores = Vec<((usize, usize), f64)>;

fn replaced_neurons(state: &AbstractionState) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = state.records.iter().map(|r| (r.layer, r.neuron)).collect();
    out.sort_unstable();
    out
}

fn combination(coefficients: &[(usize, f64)], z: &[f64]) -> f64 {
    coefficients.iter().map(|&(j, a)| a * z[j]).sum()
}

/// `|z_i(x) − Σ α_j z_j(x)|` with activations of the original network.
pub fn score_difference(state: &AbstractionState, x: &[f64]) -> Result<Scores> {
    let fwd = state.original.forward(x)?;
    Ok(replaced_neurons(state)
        .into_iter()
        .map(|(l, i)| {
            let rec = state.record(l, i).unwrap();
            let z = &fwd.post[l];
            ((l, i), (z[i] - combination(&rec.coefficients, z)).abs())
        })
        .collect())
}

/// Simulates one gradient step on the incoming weights of the basis
/// neurons of the abstract network and scores each replaced neuron by
/// `(z̄_i − z_i) · (Σ α_j z̃_j − z_i)`, where `z̄_i` is its combination
/// after the step, `z̃` are abstract activations and `z_i` is the
/// original neuron's value. The loss compares the abstract logits with
/// the original network's.
pub fn score_gradient(state: &AbstractionState, x: &[f64], learning_rate: f64, loss: Loss) -> Result<Scores> {
    let orig = state.original.forward(x)?;
    let fwd = state.current.forward(x)?;
    let dlogits = loss.gradient(fwd.logits(), orig.logits());
    let grads = backprop(&state.current, &fwd, &dlogits);
    let mut scores = Vec::new();
    for (l, i) in replaced_neurons(state) {
        let rec = state.record(l, i).unwrap();
        let layer = &state.current.layers()[l - 1];
        let prev = &fwd.post[l - 1];
        let stepped = |j: usize| {
            let w: Vector = layer
                .weights
                .row(j)
                .iter()
                .zip(grads.weights[l - 1].row(j))
                .map(|(w, g)| w - learning_rate * g)
                .collect();
            layer.activation.apply(dot(&w, prev) + layer.bias[j])
        };
        let z_bar: f64 = rec.coefficients.iter().map(|&(j, a)| a * stepped(j)).sum();
        let z_i = orig.post[l][i];
        let comb = combination(&rec.coefficients, &fwd.post[l]);
        scores.push(((l, i), (z_bar - z_i) * (comb - z_i)));
    }
    Ok(scores)
}

/// Loss decrease obtained by restoring each replaced neuron on a scratch copy.
pub fn score_lookahead(state: &AbstractionState, x: &[f64], loss: Loss) -> Result<Scores> {
    let reference = state.original.logits(x)?;
    let before = loss.value(&state.current.logits(x)?, &reference);
    let mut scores = Vec::new();
    for (l, i) in replaced_neurons(state) {
        let mut scratch = state.clone();
        scratch.restore_neuron(l, i)?;
        let after = loss.value(&scratch.current.logits(x)?, &reference);
        scores.push(((l, i), before - after));
    }
    Ok(scores)
}

pub fn score(state: &AbstractionState, x: &[f64], config: &RefinementConfig) -> Result<Scores> {
    match config.heuristic {
        Heuristic::Difference => score_difference(state, x),
        Heuristic::Gradient => score_gradient(state, x, config.learning_rate, config.loss),
        Heuristic::Lookahead => score_lookahead(state, x, config.loss),
    }
}

/// Highest score; the first in `(layer, neuron)` order wins ties.
fn best(scores: &Scores) -> Option<(usize, usize)> {
    let mut top: Option<((usize, usize), f64)> = None;
    for &(key, s) in scores {
        if top.is_none_or(|(_, t)| s > t) {
            top = Some((key, s));
        }
    }
    top.map(|(k, _)| k)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefinementReport {
    /// `(layer, neuron)` in restoration order.
    pub restored: Vec<(usize, usize)>,
    /// Counterexamples on which the labels agree after refinement.
    pub fixed: usize,
    /// Wall time of each restoration step (scoring included), seconds.
    pub step_times: Vec<f64>,
}

/// Walks the counterexamples in order and, while one is still
/// misclassified relative to the original, restores the top-scored
/// neuron, until the budget is spent.
pub fn refine(
    state: &mut AbstractionState,
    counterexamples: &[Counterexample],
    config: &RefinementConfig,
) -> Result<RefinementReport> {
    let mut report = RefinementReport::default();
    'outer: for ce in counterexamples {
        loop {
            if argmax(&state.current.logits(&ce.input)?) == ce.original_label {
                break;
            }
            if report.restored.len() >= config.budget {
                break 'outer;
            }
            let started = Instant::now();
            let scores = score(state, &ce.input, config)?;
            let Some((l, i)) = best(&scores) else { break 'outer };
            state.restore_neuron(l, i)?;
            report.restored.push((l, i));
            report.step_times.push(started.elapsed().as_secs_f64());
        }
    }
    for ce in counterexamples {
        if state.current.predict(&ce.input)? == ce.original_label {
            report.fixed += 1;
        }
    }
    Ok(report)
}
