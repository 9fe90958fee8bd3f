//! Basis selection: variance ranking and the greedy projection-error search.

use crate::error::{Error, Result};
use crate::numerics::{dot, norm2, variance, Matrix, OrthoBasis, Vector};

/// Indices (ascending) of the `k` rows with the largest variance; among
/// equal variances the lower index wins.
pub fn variance_basis(z: &Matrix, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > z.rows() {
        return Err(Error::InvalidArgument(format!(
            "basis size {k} out of range 1..={}",
            z.rows()
        )));
    }
    let vars: Vec<f64> = z.row_iter().map(variance).collect();
    let mut order: Vec<usize> = (0..z.rows()).collect();
    order.sort_by(|&a, &b| vars[b].total_cmp(&vars[a]).then(a.cmp(&b)));
    let mut basis = order[..k].to_vec();
    basis.sort_unstable();
    Ok(basis)
}

/// Outcome of the greedy search over several layers. Layer indices refer
/// to positions in the slice passed in.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedySelection {
    pub bases: Vec<Vec<usize>>,
    /// `(layer, neuron)` in removal order.
    pub order: Vec<(usize, usize)>,
    /// Projection error of the chosen removal at each step.
    pub errors: Vec<f64>,
}

/// Tolerance under which two candidate errors count as tied.
fn tie_tolerance(scale: f64) -> f64 {
    1e-9 * scale.max(1.0)
}

/// Projection error of every neuron's row onto the span of the basis rows.
pub fn projection_error(z: &Matrix, basis: &[usize]) -> f64 {
    let rows: Vec<&[f64]> = basis.iter().map(|&j| z.row(j)).collect();
    let ob = OrthoBasis::new(&rows);
    z.row_iter()
        .map(|y| {
            let r = ob.residual(y);
            dot(&r, &r)
        })
        .sum::<f64>()
        .sqrt()
}

/// Errors of removing each basis member, aligned with `basis`.
pub fn removal_errors_reference(z: &Matrix, basis: &[usize]) -> Vec<f64> {
    (0..basis.len())
        .map(|p| {
            let rest: Vec<usize> = basis.iter().enumerate().filter(|&(q, _)| q != p).map(|(_, &j)| j).collect();
            projection_error(z, &rest)
        })
        .collect()
}

/// Same quantity as `removal_errors_reference` from a single
/// factorization of the full basis.
///
/// For an independent member at position `p` of the triangular factor,
/// dropping it loses exactly the direction `Q R⁻ᵀ e_p`; the squared error
/// grows by `‖(R⁻¹ Qᵀ Y)_p‖² / ‖(R⁻¹)_p‖²`. Members that some dependent
/// member needs (or that are themselves dependent) can be removed without
/// changing the span.
pub fn removal_errors(z: &Matrix, basis: &[usize]) -> Vec<f64> {
    let rows: Vec<&[f64]> = basis.iter().map(|&j| z.row(j)).collect();
    let ob = OrthoBasis::new(&rows);
    let base2: f64 = z
        .row_iter()
        .map(|y| {
            let r = ob.residual(y);
            dot(&r, &r)
        })
        .sum();
    let rank = ob.rank();
    let mut errors = vec![base2.sqrt(); basis.len()];
    if rank == 0 {
        return errors;
    }
    let mut redundant = vec![false; rank];
    for &d in ob.dependent() {
        let coef = ob.coefficients(rows[d]);
        let dn = norm2(rows[d]);
        for (p, &c) in coef.iter().enumerate() {
            let jn = norm2(rows[ob.independent()[p]]);
            if c.abs() * jn > 1e-9 * dn {
                redundant[p] = true;
            }
        }
    }
    let rinv = ob.r_inverse();
    // M = R⁻¹ Qᵀ Y, accumulated one column of Y at a time
    let q = ob.directions();
    let mut m_norm2 = vec![0.0; rank];
    let mut c = vec![0.0; rank];
    for y in z.row_iter() {
        for (cv, qv) in c.iter_mut().zip(q) {
            *cv = dot(qv, y);
        }
        for (p, acc) in m_norm2.iter_mut().enumerate() {
            let v: f64 = rinv[p][p..].iter().zip(&c[p..]).map(|(a, b)| a * b).sum();
            *acc += v * v;
        }
    }
    for p in 0..rank {
        if redundant[p] {
            continue;
        }
        let rn2: f64 = rinv[p].iter().map(|v| v * v).sum();
        errors[ob.independent()[p]] = (base2 + m_norm2[p] / rn2).sqrt();
    }
    errors
}

/// Greedy removal of `k_remove` neurons over all layers: each step drops
/// the (layer, neuron) whose removal leaves the smallest projection error
/// of its layer. Every layer keeps at least one neuron; ties go to the
/// lower layer, then the lower index.
pub fn greedy_basis_selection(layers: &[&Matrix], k_remove: usize) -> Result<GreedySelection> {
    greedy_impl(layers, k_remove, removal_errors)
}

/// Greedy selection recomputing every candidate's projection from scratch.
pub fn greedy_basis_selection_reference(layers: &[&Matrix], k_remove: usize) -> Result<GreedySelection> {
    greedy_impl(layers, k_remove, removal_errors_reference)
}

fn greedy_impl(
    layers: &[&Matrix],
    k_remove: usize,
    errors_of: fn(&Matrix, &[usize]) -> Vec<f64>,
) -> Result<GreedySelection> {
    let removable: usize = layers.iter().map(|z| z.rows().saturating_sub(1)).sum();
    if k_remove > removable {
        return Err(Error::InvalidArgument(format!(
            "cannot remove {k_remove} neurons; at most {removable} while keeping one per layer"
        )));
    }
    let mut bases: Vec<Vec<usize>> = layers.iter().map(|z| (0..z.rows()).collect()).collect();
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; layers.len()];
    let mut order = Vec::with_capacity(k_remove);
    let mut step_errors = Vec::with_capacity(k_remove);
    for _ in 0..k_remove {
        let mut best: Option<(usize, usize, f64)> = None;
        for (l, z) in layers.iter().enumerate() {
            if bases[l].len() <= 1 {
                continue;
            }
            let errs = cache[l].get_or_insert_with(|| errors_of(z, &bases[l]));
            for (p, &e) in errs.iter().enumerate() {
                let better = match best {
                    None => true,
                    Some((_, _, be)) => e < be - tie_tolerance(be),
                };
                if better {
                    best = Some((l, p, e));
                }
            }
        }
        let (l, p, e) = best.expect("a removable neuron exists");
        let neuron = bases[l].remove(p);
        cache[l] = None;
        order.push((l, neuron));
        step_errors.push(e);
    }
    Ok(GreedySelection {
        bases,
        order,
        errors: step_errors,
    })
}

/// Rows `[W_{i,*}, b_i]`: the weight-space description of each neuron.
pub fn syntactic_features(weights: &Matrix, bias: &[f64]) -> Matrix {
    let rows: Vec<Vector> = weights
        .row_iter()
        .zip(bias)
        .map(|(w, &b)| {
            let mut r = w.to_vec();
            r.push(b);
            r
        })
        .collect();
    Matrix::from_rows(&rows).expect("weights and bias are finite")
}
