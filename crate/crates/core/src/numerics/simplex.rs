//! Dense tableau simplex and L1 regression on top of it.

use super::{Matrix, Vector};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;

/// `minimize cᵀx  subject to  A x = b,  x ≥ 0`.
#[derive(Clone, Debug)]
pub struct StandardFormLp {
    pub a: Matrix,
    pub b: Vector,
    pub c: Vector,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vector,
    pub objective: f64,
    pub pivots: usize,
}

struct Tableau {
    /// Row-major `m × width`; the last column is the right-hand side.
    t: Vec<f64>,
    m: usize,
    width: usize,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn row(&self, r: usize) -> &[f64] {
        &self.t[r * self.width..(r + 1) * self.width]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.t[r * self.width + self.width - 1]
    }

    fn pivot(&mut self, pr: usize, pc: usize, d: &mut [f64], obj: &mut f64) {
        let w = self.width;
        let inv = 1.0 / self.t[pr * w + pc];
        for v in &mut self.t[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.t[pr * w + pc] = 1.0;
        let prow = self.t[pr * w..(pr + 1) * w].to_vec();
        let nz: Vec<usize> = (0..w).filter(|&j| prow[j] != 0.0).collect();
        for r in 0..self.m {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[r * w..(r + 1) * w];
            for &j in &nz {
                row[j] -= f * prow[j];
            }
            row[pc] = 0.0;
        }
        let f = d[pc];
        if f != 0.0 {
            for &j in &nz {
                if j < d.len() {
                    d[j] -= f * prow[j];
                }
            }
            d[pc] = 0.0;
            *obj += f * prow[w - 1];
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Reduced costs and objective recomputed from `cost` and the tableau.
    fn price(&self, cost: &[f64], d: &mut [f64], obj: &mut f64) {
        d.copy_from_slice(&cost[..d.len()]);
        *obj = 0.0;
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = self.row(r);
                for (dj, v) in d.iter_mut().zip(row) {
                    *dj -= cb * v;
                }
                *obj += cb * self.rhs(r);
            }
        }
    }

    /// Runs primal simplex over columns `0..ncols` with reduced costs `d`
    /// for the objective `cost`. `obj` tracks the objective value of the
    /// current basic solution.
    fn optimize(&mut self, cost: &[f64], d: &mut [f64], obj: &mut f64, ncols: usize) -> Result<()> {
        let max_pivots = 50 * (self.m + ncols) + 1000;
        let scale = cost.iter().fold(1.0f64, |a, c| a.max(c.abs())) * (self.m as f64);
        let mut bland = false;
        // columns whose negative reduced cost is rounding noise without a pivot
        let mut blocked = vec![false; ncols];
        let mut repriced = false;
        loop {
            let candidates = (0..ncols).filter(|&j| !blocked[j] && d[j] < -COST_TOL);
            let entering = if bland {
                candidates.min()
            } else {
                candidates.min_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)))
            };
            let Some(pc) = entering else { return Ok(()) };
            let w = self.width;
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[r * w + pc];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, best)) => {
                            ratio < best - 1e-12 * best.abs().max(1.0)
                                || (ratio <= best + 1e-12 * best.abs().max(1.0)
                                    && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                if !repriced {
                    self.price(cost, d, obj);
                    repriced = true;
                    continue;
                }
                if d[pc] > -1e-9 * scale {
                    blocked[pc] = true;
                    continue;
                }
                return Err(Error::Lp("objective is unbounded below".into()));
            };
            self.pivot(pr, pc, d, obj);
            repriced = false;
            // Bland's rule while stalled, Dantzig again once we make progress
            bland = ratio == 0.0;
            if self.pivots > max_pivots {
                return Err(Error::Lp(format!("no convergence after {max_pivots} pivots")));
            }
        }
    }
}

/// Solves a standard-form LP.
///
/// With `initial_basis`, the given columns must form a basis whose basic
/// solution is feasible, and Phase I is skipped. Otherwise artificial
/// variables find a feasible basis first.
pub fn solve_standard_form(lp: &StandardFormLp, initial_basis: Option<&[usize]>) -> Result<LpSolution> {
    let (m, n) = (lp.a.rows(), lp.a.cols());
    if lp.b.len() != m || lp.c.len() != n {
        return Err(Error::Dimension(format!(
            "LP with {m}x{n} constraints, |b| = {}, |c| = {}",
            lp.b.len(),
            lp.c.len()
        )));
    }
    match initial_basis {
        Some(basis) => solve_from_basis(lp, basis),
        None => solve_two_phase(lp),
    }
}

fn solve_from_basis(lp: &StandardFormLp, basis: &[usize]) -> Result<LpSolution> {
    let (m, n) = (lp.a.rows(), lp.a.cols());
    if basis.len() != m || basis.iter().any(|&j| j >= n) {
        return Err(Error::InvalidArgument("initial basis has the wrong shape".into()));
    }
    let width = n + 1;
    let mut t = vec![0.0; m * width];
    for r in 0..m {
        t[r * width..r * width + n].copy_from_slice(lp.a.row(r));
        t[r * width + n] = lp.b[r];
    }
    let mut tab = Tableau {
        t,
        m,
        width,
        basis: vec![usize::MAX; m],
        pivots: 0,
    };
    let mut d = lp.c.clone();
    let mut obj = 0.0;
    for (r, &j) in basis.iter().enumerate() {
        let unit = (0..m).all(|q| tab.t[q * width + j] == if q == r { 1.0 } else { 0.0 });
        if unit {
            tab.basis[r] = j;
        } else if tab.t[r * width + j].abs() > PIVOT_TOL {
            tab.pivot(r, j, &mut d, &mut obj);
        } else {
            return Err(Error::InvalidArgument("initial basis is singular".into()));
        }
    }
    if (0..m).any(|r| tab.rhs(r) < -1e-9) {
        return Err(Error::InvalidArgument("initial basis is infeasible".into()));
    }
    // price out the basic columns
    for r in 0..m {
        let j = tab.basis[r];
        let f = d[j];
        if f != 0.0 {
            let row = tab.row(r).to_vec();
            for (dj, v) in d.iter_mut().zip(&row[..n]) {
                *dj -= f * v;
            }
            obj += f * row[n];
        }
    }
    tab.pivots = 0;
    tab.optimize(&lp.c, &mut d, &mut obj, n)?;
    Ok(extract(&tab, n, &lp.c))
}

fn solve_two_phase(lp: &StandardFormLp) -> Result<LpSolution> {
    let (m, n) = (lp.a.rows(), lp.a.cols());
    let width = n + m + 1;
    let mut t = vec![0.0; m * width];
    for r in 0..m {
        let sign = if lp.b[r] < 0.0 { -1.0 } else { 1.0 };
        for (dst, v) in t[r * width..r * width + n].iter_mut().zip(lp.a.row(r)) {
            *dst = sign * v;
        }
        t[r * width + n + r] = 1.0;
        t[r * width + n + m] = sign * lp.b[r];
    }
    let mut tab = Tableau {
        t,
        m,
        width,
        basis: (n..n + m).collect(),
        pivots: 0,
    };
    // phase I: minimize the sum of artificials
    let mut phase1 = vec![0.0; n + m];
    phase1[n..].fill(1.0);
    let mut d = vec![0.0; n + m];
    let mut obj = 0.0;
    for r in 0..m {
        let row = tab.row(r);
        for j in 0..n {
            d[j] -= row[j];
        }
        obj += row[n + m];
    }
    tab.optimize(&phase1, &mut d, &mut obj, n + m)?;
    let bnorm: f64 = lp.b.iter().map(|v| v.abs()).sum();
    if obj > 1e-9 * (1.0 + bnorm) {
        return Err(Error::Lp("constraints are infeasible".into()));
    }
    // drive remaining artificials out of the basis where possible
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(j) = (0..n).find(|&j| tab.row(r)[j].abs() > 1e-9) {
                let mut dummy = vec![0.0; n + m];
                let mut o = 0.0;
                tab.pivot(r, j, &mut dummy, &mut o);
            }
        }
    }
    // phase II over the original columns only
    let mut phase2 = vec![0.0; n + m];
    phase2[..n].copy_from_slice(&lp.c);
    let mut d = phase2.clone();
    let mut obj = 0.0;
    for r in 0..m {
        let j = tab.basis[r];
        let cj = if j < n { lp.c[j] } else { 0.0 };
        if cj != 0.0 {
            let row = tab.row(r).to_vec();
            for (dj, v) in d.iter_mut().zip(&row[..n + m]) {
                *dj -= cj * v;
            }
            obj += cj * row[n + m];
        }
    }
    tab.optimize(&phase2, &mut d, &mut obj, n)?;
    Ok(extract(&tab, n, &lp.c))
}

fn extract(tab: &Tableau, n: usize, c: &[f64]) -> LpSolution {
    let mut x = vec![0.0; n];
    for r in 0..tab.m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    let objective = x.iter().zip(c).map(|(a, b)| a * b).sum();
    LpSolution {
        x,
        objective,
        pivots: tab.pivots,
    }
}

#[derive(Clone, Debug)]
pub struct L1Fit {
    pub coefficients: Vector,
    pub residual_l1: f64,
}

/// `argmin_α ‖A α − y‖₁` through the LP
/// `min 1ᵀβ⁺ + 1ᵀβ⁻  s.t.  A(α⁺ − α⁻) − β⁺ + β⁻ = y`, all variables ≥ 0.
pub fn l1_fit(a: &Matrix, y: &[f64]) -> Result<L1Fit> {
    let (m, k) = (a.rows(), a.cols());
    if m == 0 || k == 0 {
        return Err(Error::InvalidArgument("L1 fit needs at least one row and column".into()));
    }
    if y.len() != m {
        return Err(Error::Dimension(format!("target has length {}, matrix has {m} rows", y.len())));
    }
    let n = 2 * k + 2 * m;
    let mut lp_a = Matrix::zeros(m, n);
    let mut b = vec![0.0; m];
    let mut basis = vec![0; m];
    for r in 0..m {
        // flip negative rows so the slack that absorbs y_r enters with +1
        let s = if y[r] < 0.0 { -1.0 } else { 1.0 };
        let row = lp_a.row_mut(r);
        for (j, v) in a.row(r).iter().enumerate() {
            row[j] = s * v;
            row[k + j] = -s * v;
        }
        row[2 * k + r] = -s;
        row[2 * k + m + r] = s;
        b[r] = s * y[r];
        basis[r] = if s > 0.0 { 2 * k + m + r } else { 2 * k + r };
    }
    let mut c = vec![0.0; n];
    for v in &mut c[2 * k..] {
        *v = 1.0;
    }
    let sol = solve_standard_form(&StandardFormLp { a: lp_a, b, c }, Some(&basis))?;
    let coefficients = (0..k).map(|j| sol.x[j] - sol.x[k + j]).collect();
    Ok(L1Fit {
        coefficients,
        residual_l1: sol.objective,
    })
}
