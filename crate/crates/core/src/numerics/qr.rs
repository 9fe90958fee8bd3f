//! Least squares and column-space projection.

use super::{axpy, dot, norm2, Matrix, Vector, RANK_TOLERANCE};
use crate::error::{Error, Result};

/// Householder QR factorization of a tall matrix with full column rank.
///
/// Stored column-major: column `j` holds `R[..=j, j]` above the diagonal and
/// the essential part of the `j`-th reflector below it (leading 1 implied).
#[derive(Clone, Debug)]
pub struct HouseholderQr {
    m: usize,
    k: usize,
    packed: Vec<f64>,
    tau: Vec<f64>,
    diag: Vec<f64>,
}

impl HouseholderQr {
    pub fn new(a: &Matrix) -> Result<Self> {
        let (m, k) = (a.rows(), a.cols());
        if k == 0 {
            return Err(Error::InvalidArgument("least squares with no columns".into()));
        }
        let mut packed = a.transpose().as_slice().to_vec();
        let mut tau = vec![0.0; k];
        let mut diag = vec![0.0; k];
        for j in 0..k {
            if j >= m {
                return Err(Error::Singular { column: j });
            }
            let original_norm = norm2(&packed[j * m..(j + 1) * m]);
            let (head, tail) = packed.split_at_mut((j + 1) * m);
            let col = &mut head[j * m..];
            let x0 = col[j];
            let norm = norm2(&col[j..]);
            if original_norm == 0.0 || norm <= RANK_TOLERANCE * original_norm {
                return Err(Error::Singular { column: j });
            }
            let beta = if x0 >= 0.0 { -norm } else { norm };
            let scale = 1.0 / (x0 - beta);
            for v in &mut col[j + 1..] {
                *v *= scale;
            }
            col[j] = 1.0;
            tau[j] = (beta - x0) / beta;
            diag[j] = beta;
            let v = &col[j..];
            for c in tail.chunks_mut(m) {
                let w = tau[j] * dot(v, &c[j..]);
                axpy(-w, v, &mut c[j..]);
            }
            col[j] = beta;
        }
        Ok(Self {
            m,
            k,
            packed,
            tau,
            diag,
        })
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.k
    }

    fn reflector(&self, j: usize) -> (f64, &[f64]) {
        (self.tau[j], &self.packed[j * self.m + j + 1..(j + 1) * self.m])
    }

    fn apply_reflector(&self, j: usize, y: &mut [f64]) {
        let (tau, tail) = self.reflector(j);
        let w = tau * (y[j] + dot(tail, &y[j + 1..]));
        y[j] -= w;
        axpy(-w, tail, &mut y[j + 1..]);
    }

    /// `Qᵀ y` (full length `m`).
    pub fn q_transpose(&self, y: &[f64]) -> Vector {
        assert_eq!(y.len(), self.m);
        let mut out = y.to_vec();
        for j in 0..self.k {
            self.apply_reflector(j, &mut out);
        }
        out
    }

    /// `Q z` for a full-length `z`.
    pub fn q_apply(&self, z: &[f64]) -> Vector {
        assert_eq!(z.len(), self.m);
        let mut out = z.to_vec();
        for j in (0..self.k).rev() {
            self.apply_reflector(j, &mut out);
        }
        out
    }

    /// Minimizer of `‖A α − y‖₂`.
    pub fn solve(&self, y: &[f64]) -> Vector {
        let qty = self.q_transpose(y);
        let mut alpha = qty[..self.k].to_vec();
        for j in (0..self.k).rev() {
            let mut s = alpha[j];
            for c in j + 1..self.k {
                s -= self.packed[c * self.m + j] * alpha[c];
            }
            alpha[j] = s / self.diag[j];
        }
        alpha
    }

    /// Orthogonal projection of `y` onto the column space of `A`.
    pub fn project(&self, y: &[f64]) -> Vector {
        let mut z = self.q_transpose(y);
        for v in &mut z[self.k..] {
            *v = 0.0;
        }
        self.q_apply(&z)
    }
}

/// Least-squares coefficients `α = argmin ‖A α − y‖₂` via Householder QR.
pub fn least_squares(a: &Matrix, y: &[f64]) -> Result<Vector> {
    if y.len() != a.rows() {
        return Err(Error::Dimension(format!(
            "target has length {}, matrix has {} rows",
            y.len(),
            a.rows()
        )));
    }
    Ok(HouseholderQr::new(a)?.solve(y))
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub projected: Matrix,
    /// Frobenius norm of `Y − Π_A Y`.
    pub error: f64,
}

/// Projects every column of `y` onto the column space of `a`.
pub fn project_columns(a: &Matrix, y: &Matrix) -> Result<Projection> {
    if y.rows() != a.rows() {
        return Err(Error::Dimension(format!(
            "Y has {} rows, A has {}",
            y.rows(),
            a.rows()
        )));
    }
    let qr = HouseholderQr::new(a)?;
    let mut projected = Matrix::zeros(y.rows(), y.cols());
    let mut err2 = 0.0;
    for c in 0..y.cols() {
        let col = y.column(c);
        let p = qr.project(&col);
        err2 += col
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        projected.set_column(c, &p);
    }
    Ok(Projection {
        projected,
        error: err2.sqrt(),
    })
}

/// Rank-revealing orthonormal basis of a list of vectors.
///
/// Vectors are processed in order with two-pass Gram-Schmidt; a vector
/// whose orthogonalized norm drops below `RANK_TOLERANCE` times its
/// original norm is marked dependent and contributes no basis direction.
#[derive(Clone, Debug)]
pub struct OrthoBasis {
    dim: usize,
    /// Orthonormal directions, one per independent vector.
    q: Vec<Vector>,
    /// `r[p]` holds the coordinates of independent vector `p` in `q[..=p]`.
    r: Vec<Vector>,
    independent: Vec<usize>,
    dependent: Vec<usize>,
}

impl OrthoBasis {
    pub fn new<V: AsRef<[f64]>>(vectors: &[V]) -> Self {
        let dim = vectors.first().map_or(0, |v| v.as_ref().len());
        let mut basis = Self {
            dim,
            q: Vec::new(),
            r: Vec::new(),
            independent: Vec::new(),
            dependent: Vec::new(),
        };
        for (idx, v) in vectors.iter().enumerate() {
            let v = v.as_ref();
            assert_eq!(v.len(), dim, "vectors must share a length");
            let original = norm2(v);
            let (coords, residual) = basis.orthogonalize(v);
            let norm = norm2(&residual);
            if original == 0.0 || norm <= RANK_TOLERANCE * original {
                basis.dependent.push(idx);
            } else {
                let mut rcol = coords;
                rcol.push(norm);
                basis.q.push(residual.iter().map(|x| x / norm).collect());
                basis.r.push(rcol);
                basis.independent.push(idx);
            }
        }
        basis
    }

    /// Coordinates of `v` in the current directions and the orthogonal
    /// remainder, with one re-orthogonalization pass.
    fn orthogonalize(&self, v: &[f64]) -> (Vector, Vector) {
        let mut residual = v.to_vec();
        let mut coords = vec![0.0; self.q.len()];
        for _ in 0..2 {
            let c: Vector = self.q.iter().map(|q| dot(q, &residual)).collect();
            for (q, &cp) in self.q.iter().zip(&c) {
                axpy(-cp, q, &mut residual);
            }
            for (a, b) in coords.iter_mut().zip(&c) {
                *a += b;
            }
        }
        (coords, residual)
    }

    pub fn rank(&self) -> usize {
        self.q.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Positions (in the input list) of the vectors that span the space.
    pub fn independent(&self) -> &[usize] {
        &self.independent
    }

    /// Positions of the vectors that were linearly dependent on earlier ones.
    pub fn dependent(&self) -> &[usize] {
        &self.dependent
    }

    pub fn directions(&self) -> &[Vector] {
        &self.q
    }

    /// Component of `y` orthogonal to the spanned space.
    pub fn residual(&self, y: &[f64]) -> Vector {
        self.orthogonalize(y).1
    }

    /// Coefficients expressing the projection of `y` in terms of the
    /// independent input vectors.
    pub fn coefficients(&self, y: &[f64]) -> Vector {
        let (coords, _) = self.orthogonalize(y);
        self.solve_r(coords)
    }

    fn solve_r(&self, mut c: Vector) -> Vector {
        for p in (0..c.len()).rev() {
            let mut s = c[p];
            for t in p + 1..c.len() {
                s -= self.r[t][p] * c[t];
            }
            c[p] = s / self.r[p][p];
        }
        c
    }

    /// Dense inverse of the triangular factor, row-major `rank × rank`.
    pub fn r_inverse(&self) -> Vec<Vector> {
        let n = self.rank();
        let mut inv = vec![vec![0.0; n]; n];
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            let x = self.solve_r(e);
            for (row, v) in x.into_iter().enumerate() {
                inv[row][col] = v;
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm_inf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_system_returns_target() {
        let alpha = least_squares(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        for (a, e) in alpha.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn single_ones_column_gives_mean() {
        let a = Matrix::from_columns(&[[1.0, 1.0, 1.0]]).unwrap();
        let alpha = least_squares(&a, &[1.0, 2.0, 3.0]).unwrap();
        assert!((alpha[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn residual_is_orthogonal_to_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 6, 3);
            let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let alpha = least_squares(&a, &y).unwrap();
            let fitted = a.matvec(&alpha);
            let r: Vec<f64> = fitted.iter().zip(&y).map(|(f, y)| f - y).collect();
            let atr = a.transpose().matvec(&r);
            let scale = norm_inf(&a.transpose().matvec(&y)).max(1.0);
            assert!(norm_inf(&atr) <= 1e-8 * scale, "Aᵀr = {atr:?}");
        }
    }

    #[test]
    fn qr_agrees_with_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 8, 3);
        let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = least_squares(&a, &y).unwrap();
        // (AᵀA)⁻¹Aᵀy by Cramer's rule on the 3x3 system
        let ata = a.transpose().matmul(&a).unwrap();
        let aty = a.transpose().matvec(&y);
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let g = |i, j| ata[(i, j)];
        let base = [
            [g(0, 0), g(0, 1), g(0, 2)],
            [g(1, 0), g(1, 1), g(1, 2)],
            [g(2, 0), g(2, 1), g(2, 2)],
        ];
        let d = det3(base);
        for c in 0..3 {
            let mut m = base;
            for (r, row) in m.iter_mut().enumerate() {
                row[c] = aty[r];
            }
            assert!((det3(m) / d - alpha[c]).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficient_system_is_rejected() {
        let a = Matrix::from_columns(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]).unwrap();
        assert!(matches!(
            least_squares(&a, &[1.0, 1.0, 1.0]),
            Err(Error::Singular { column: 1 })
        ));
        let zero = Matrix::from_columns(&[[0.0, 0.0]]).unwrap();
        assert!(least_squares(&zero, &[1.0, 1.0]).is_err());
        // more columns than rows can never have full column rank
        assert!(least_squares(&Matrix::identity(2).transpose(), &[1.0, 1.0]).is_ok());
        let wide = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]).unwrap();
        assert!(least_squares(&wide, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn axis_projection() {
        let a = Matrix::from_columns(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let y = Matrix::from_columns(&[[1.0, 2.0, 3.0]]).unwrap();
        let p = project_columns(&a, &y).unwrap();
        let col = p.projected.column(0);
        assert!((col[0] - 1.0).abs() < 1e-15 && (col[1] - 2.0).abs() < 1e-15);
        assert!(col[2].abs() < 1e-15);
        assert!((p.error - 3.0).abs() < 1e-14);
    }

    #[test]
    fn in_span_projection_has_zero_error() {
        let a = Matrix::from_columns(&[[1.0, 1.0, 0.0, 2.0], [0.0, 1.0, 1.0, -1.0]]).unwrap();
        let y = Matrix::from_columns(&[[2.0, 3.0, 1.0, 3.0], [1.0, 0.0, -1.0, 3.0]]).unwrap();
        assert!(project_columns(&a, &y).unwrap().error < 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_contracting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a = random_matrix(&mut rng, 9, 4);
            let y = random_matrix(&mut rng, 9, 5);
            let p = project_columns(&a, &y).unwrap();
            let pp = project_columns(&a, &p.projected).unwrap();
            assert!(pp.projected.max_abs_diff(&p.projected) < 1e-9);
            assert!(p.error <= y.frobenius_norm());
            assert!(p.projected.frobenius_norm() <= y.frobenius_norm() + 1e-12);
        }
    }

    #[test]
    fn ortho_basis_flags_dependent_vectors() {
        let v1 = [1.0, 0.0, 1.0, 0.0];
        let v2 = [0.0, 1.0, 0.0, 0.0];
        let v3 = [2.0, 3.0, 2.0, 0.0];
        let zero = [0.0; 4];
        let v5 = [0.0, 0.0, 0.0, 1.0];
        let b = OrthoBasis::new(&[&v1[..], &v2, &v3, &zero, &v5]);
        assert_eq!(b.independent(), &[0, 1, 4]);
        assert_eq!(b.dependent(), &[2, 3]);
        let c = b.coefficients(&v3);
        assert!((c[0] - 2.0).abs() < 1e-12 && (c[1] - 3.0).abs() < 1e-12 && c[2].abs() < 1e-12);
        assert!(norm2(&b.residual(&v3)) < 1e-12);
    }

    #[test]
    fn r_inverse_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let b = OrthoBasis::new(&cols);
        let inv = b.r_inverse();
        for i in 0..4 {
            for j in 0..4 {
                let s: f64 = (0..4)
                    .map(|t| if t <= j { b.r[j][t] * inv[i][t] } else { 0.0 })
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-10, "({i},{j}) {s}");
            }
        }
    }
}
