//! Basis selection, coefficient fitting and replacement, tied together.

mod basis;
mod coeffs;
mod state;

pub use basis::{
    greedy_basis_selection, greedy_basis_selection_reference, projection_error, removal_errors,
    removal_errors_reference, syntactic_features, variance_basis, GreedySelection,
};
pub use coeffs::{fit_coefficients, CoefficientFitter, CoefficientMethod};
pub use state::{AbstractionState, ReplacementRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::numerics::{Matrix, OrthoBasis, Vector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Greedy,
    #[default]
    Variance,
}

/// Where the per-neuron vectors used for selection and fitting come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticsSource {
    /// Activations over the I/O set.
    #[default]
    Semantic,
    /// Incoming weights with the bias appended.
    Syntactic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// Fraction of hidden neurons to remove.
    ReductionRate(f64),
    /// Basis size for each hidden layer.
    BasisSizes(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractionConfig {
    pub selection: Selection,
    pub coefficients: CoefficientMethod,
    pub target: Target,
    pub source: SemanticsSource,
}

impl AbstractionConfig {
    pub fn with_rate(rr: f64) -> Self {
        Self {
            selection: Selection::Variance,
            coefficients: CoefficientMethod::Orthogonal,
            target: Target::ReductionRate(rr),
            source: SemanticsSource::Semantic,
        }
    }
}

/// Splits `round(rr · Σ widths)` removals over layers in proportion to
/// their widths: floors first, then the largest fractional parts (ties to
/// the lower layer). Every layer keeps at least one neuron.
pub fn removal_counts(widths: &[usize], rr: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&rr) {
        return Err(Error::InvalidArgument(format!("reduction rate {rr} not in [0, 1)")));
    }
    let total_neurons: usize = widths.iter().sum();
    let total = (rr * total_neurons as f64).round() as usize;
    let cap: usize = widths.iter().map(|w| w.saturating_sub(1)).sum();
    if total > cap {
        return Err(Error::InvalidArgument(format!(
            "reduction rate {rr} removes {total} neurons but at most {cap} can go"
        )));
    }
    let shares: Vec<f64> = widths.iter().map(|&w| rr * w as f64).collect();
    let mut counts: Vec<usize> = shares
        .iter()
        .zip(widths)
        .map(|(s, &w)| (s.floor() as usize).min(w.saturating_sub(1)))
        .collect();
    let mut by_remainder: Vec<usize> = (0..widths.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    while assigned < total {
        let before = assigned;
        for &l in &by_remainder {
            if assigned == total {
                break;
            }
            if counts[l] + 1 < widths[l] {
                counts[l] += 1;
                assigned += 1;
            }
        }
        debug_assert!(assigned > before);
    }
    Ok(counts)
}

/// Per-hidden-layer neuron vectors (entry `h` describes activation layer
/// `h + 1`), one row per neuron.
pub fn layer_features(net: &Network, inputs: &[Vector], source: SemanticsSource) -> Result<Vec<Matrix>> {
    let hidden = 1..=net.hidden_layers();
    match source {
        SemanticsSource::Semantic => {
            let all = net.all_semantics(inputs)?;
            Ok(all.into_iter().filter(|s| hidden.contains(&s.layer)).map(|s| s.values).collect())
        }
        SemanticsSource::Syntactic => Ok(hidden
            .map(|l| {
                let layer = &net.layers()[l - 1];
                syntactic_features(&layer.weights, &layer.bias)
            })
            .collect()),
    }
}

/// Bases per hidden layer (entry `h` for activation layer `h + 1`) and the
/// `(layer, neuron)` removal order, with activation-layer numbering.
/// `(layer, neuron)` pairs in the order they are replaced.
pub type ReplacementOrder = Vec<(usize, usize)>;

pub fn select_bases(
    features: &[Matrix],
    selection: Selection,
    target: &Target,
) -> Result<(Vec<Vec<usize>>, ReplacementOrder)> {
    let widths: Vec<usize> = features.iter().map(Matrix::rows).collect();
    let counts = match target {
        Target::ReductionRate(rr) => removal_counts(&widths, *rr)?,
        Target::BasisSizes(sizes) => {
            if sizes.len() != widths.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} basis sizes for {} hidden layers",
                    sizes.len(),
                    widths.len()
                )));
            }
            sizes
                .iter()
                .zip(&widths)
                .map(|(&k, &w)| {
                    if k == 0 || k > w {
                        Err(Error::InvalidArgument(format!("basis size {k} for a layer of width {w}")))
                    } else {
                        Ok(w - k)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    match selection {
        Selection::Variance => {
            let mut bases = Vec::with_capacity(features.len());
            let mut order = Vec::new();
            for (h, (z, &r)) in features.iter().zip(&counts).enumerate() {
                let basis = variance_basis(z, z.rows() - r)?;
                order.extend((0..z.rows()).filter(|i| basis.binary_search(i).is_err()).map(|i| (h + 1, i)));
                bases.push(basis);
            }
            Ok((bases, order))
        }
        Selection::Greedy => {
            let refs: Vec<&Matrix> = features.iter().collect();
            let sel = greedy_basis_selection(&refs, counts.iter().sum())?;
            let order = sel.order.into_iter().map(|(h, i)| (h + 1, i)).collect();
            Ok((sel.bases, order))
        }
    }
}

/// Replaces neurons in `order`, fitting each against `features` of its
/// layer. Linearly dependent basis members are themselves replaced by
/// their exact combination of the remaining ones first.
pub fn apply_replacements(
    state: &mut AbstractionState,
    features: &[Matrix],
    bases: &[Vec<usize>],
    order: &[(usize, usize)],
    method: CoefficientMethod,
) -> Result<()> {
    let hidden = features.len();
    let mut fitters: Vec<Option<Fitter>> = (0..hidden).map(|_| None).collect();
    for (h, basis) in bases.iter().enumerate() {
        state.set_basis(h + 1, basis.clone())?;
    }
    for &(layer, neuron) in order {
        let h = layer - 1;
        if fitters[h].is_none() {
            fitters[h] = Some(prepare_layer(state, layer, &features[h], &bases[h], method)?);
        }
        let coefficients = match fitters[h].as_ref().unwrap() {
            Fitter::Fit(f) => f.fit_pairs(neuron)?,
            Fitter::Zero(j) => vec![(*j, 0.0)],
        };
        state.replace_neuron(layer, neuron, &coefficients)?;
    }
    Ok(())
}

enum Fitter<'a> {
    Fit(CoefficientFitter<'a>),
    /// Every basis vector is zero; neurons are replaced by zero.
    Zero(usize),
}

fn prepare_layer<'a>(
    state: &mut AbstractionState,
    layer: usize,
    z: &'a Matrix,
    basis: &[usize],
    method: CoefficientMethod,
) -> Result<Fitter<'a>> {
    let rows: Vec<&[f64]> = basis.iter().map(|&j| z.row(j)).collect();
    let ob = OrthoBasis::new(&rows);
    if ob.dependent().is_empty() {
        return fitter(z, basis, ob, method);
    }
    if ob.rank() == 0 {
        log::warn!("layer {layer}: every basis vector is zero");
        let keep = basis[0];
        state.set_basis(layer, vec![keep])?;
        for &j in &basis[1..] {
            state.replace_neuron(layer, j, &[(keep, 0.0)])?;
        }
        return Ok(Fitter::Zero(keep));
    }
    let independent: Vec<usize> = ob.independent().iter().map(|&p| basis[p]).collect();
    log::warn!(
        "layer {layer}: {} basis neurons are linearly dependent and are replaced directly",
        ob.dependent().len()
    );
    state.set_basis(layer, independent.clone())?;
    for &p in ob.dependent() {
        let alpha = ob.coefficients(rows[p]);
        let coefficients: Vec<(usize, f64)> = independent.iter().copied().zip(alpha).collect();
        state.replace_neuron(layer, basis[p], &coefficients)?;
    }
    fitter(z, &independent, ob, method)
}

/// `ortho` factors the rows of `basis`, which must be independent.
fn fitter<'a>(z: &'a Matrix, basis: &[usize], ortho: OrthoBasis, method: CoefficientMethod) -> Result<Fitter<'a>> {
    let f = match method {
        CoefficientMethod::Orthogonal => CoefficientFitter::from_ortho(z, basis, ortho)?,
        CoefficientMethod::L1 => CoefficientFitter::new(z, basis, method)?,
    };
    Ok(Fitter::Fit(f))
}

/// Abstracts `net` using the I/O set `inputs` (ignored for syntactic
/// features). Coefficients always refer to the original network.
pub fn abstract_network(net: &Network, inputs: &[Vector], config: &AbstractionConfig) -> Result<AbstractionState> {
    let features = layer_features(net, inputs, config.source)?;
    let (bases, order) = select_bases(&features, config.selection, &config.target)?;
    let mut state = AbstractionState::new(net);
    apply_replacements(&mut state, &features, &bases, &order, config.coefficients)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removal_counts_use_largest_remainders() {
        assert_eq!(removal_counts(&[10, 10, 10], 0.5).unwrap(), vec![5, 5, 5]);
        // 0.25 · [3, 3, 2] = [0.75, 0.75, 0.5]; total round(2) = 2
        assert_eq!(removal_counts(&[3, 3, 2], 0.25).unwrap(), vec![1, 1, 0]);
        assert_eq!(removal_counts(&[4, 4], 0.0).unwrap(), vec![0, 0]);
        assert_eq!(removal_counts(&[2, 2], 0.5).unwrap(), vec![1, 1]);
        assert!(removal_counts(&[2, 2], 0.9).is_err());
        assert!(removal_counts(&[5], 1.0).is_err());
        let c = removal_counts(&[100, 100, 100], 0.9).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 270);
    }
}
