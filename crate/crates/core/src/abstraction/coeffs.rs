//! Coefficients expressing a neuron through a basis of its layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{l1_fit, HouseholderQr, Matrix, OrthoBasis, Vector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientMethod {
    /// Orthogonal projection (least squares).
    #[default]
    Orthogonal,
    /// L1 regression through linear programming.
    L1,
}

/// Fits many target rows against one fixed basis, factoring it once.
pub struct CoefficientFitter<'a> {
    z: &'a Matrix,
    basis: Vec<usize>,
    solver: Solver,
}

enum Solver {
    Qr(HouseholderQr),
    Ortho(OrthoBasis),
    /// Design matrix for the LP.
    L1(Matrix),
}

impl<'a> CoefficientFitter<'a> {
    /// `z` holds one row per neuron; the basis rows become the columns of
    /// the design matrix. Fails with `Error::Singular` when those columns
    /// are linearly dependent.
    pub fn new(z: &'a Matrix, basis: &[usize], method: CoefficientMethod) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidArgument("empty basis".into()));
        }
        if let Some(&bad) = basis.iter().find(|&&j| j >= z.rows()) {
            return Err(Error::InvalidArgument(format!("basis neuron {bad} out of range")));
        }
        let a = z.transpose().select_columns(basis);
        // the QR doubles as the rank check for both methods
        let qr = HouseholderQr::new(&a)?;
        let solver = match method {
            CoefficientMethod::Orthogonal => Solver::Qr(qr),
            CoefficientMethod::L1 => Solver::L1(a),
        };
        Ok(Self {
            z,
            basis: basis.to_vec(),
            solver,
        })
    }

    /// Orthogonal-projection fitter reusing a factorization of the basis
    /// rows of `z`; `basis` lists the independent ones in factor order.
    pub fn from_ortho(z: &'a Matrix, basis: &[usize], ortho: OrthoBasis) -> Result<Self> {
        if ortho.rank() != basis.len() || ortho.dim() != z.cols() {
            return Err(Error::Dimension(format!(
                "factorization of rank {} and length {} does not match {} basis rows of length {}",
                ortho.rank(),
                ortho.dim(),
                basis.len(),
                z.cols()
            )));
        }
        Ok(Self {
            z,
            basis: basis.to_vec(),
            solver: Solver::Ortho(ortho),
        })
    }

    pub fn basis(&self) -> &[usize] {
        &self.basis
    }

    /// Coefficients for neuron `i`, aligned with `basis()`.
    pub fn fit(&self, i: usize) -> Result<Vector> {
        if self.basis.contains(&i) {
            return Err(Error::InvalidArgument(format!("neuron {i} is in the basis")));
        }
        let y = self.z.row(i);
        match &self.solver {
            Solver::Qr(qr) => Ok(qr.solve(y)),
            Solver::Ortho(ortho) => Ok(ortho.coefficients(y)),
            Solver::L1(a) => Ok(l1_fit(a, y)?.coefficients),
        }
    }

    /// `(j, α_j)` pairs for neuron `i`.
    pub fn fit_pairs(&self, i: usize) -> Result<Vec<(usize, f64)>> {
        Ok(self.basis.iter().copied().zip(self.fit(i)?).collect())
    }
}

/// One-shot coefficient fit of row `i` of `z` against the basis rows.
pub fn fit_coefficients(z: &Matrix, basis: &[usize], i: usize, method: CoefficientMethod) -> Result<Vector> {
    CoefficientFitter::new(z, basis, method)?.fit(i)
}
