#![allow(dead_code)]

use linabs::network::{Activation, Layer, Network};
use linabs::numerics::{Matrix, Vector};
use rand::Rng;

/// ReLU network with uniform weights scaled by fan-in and small positive
/// biases so that most neurons are active on inputs in `[-1, 1]`.
pub fn random_net(rng: &mut impl Rng, input: usize, hidden: &[usize], output: usize) -> Network {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(output);
    let last = widths.len() - 2;
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let scale = 1.5 / (w[0] as f64).sqrt();
            let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-scale..scale)).collect();
            let bias = (0..w[1]).map(|_| rng.gen_range(0.0..0.3)).collect();
            let act = if l == last { Activation::Identity } else { Activation::Relu };
            Layer::new(Matrix::new(w[1], w[0], data).unwrap(), bias, act).unwrap()
        })
        .collect();
    Network::new(input, layers).unwrap()
}

pub fn random_hidden(rng: &mut impl Rng, layers: std::ops::RangeInclusive<usize>, widths: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    let n = rng.gen_range(layers);
    (0..n).map(|_| rng.gen_range(widths.clone())).collect()
}

pub fn random_inputs(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vector> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves `g x = r` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut g: Vec<Vec<f64>>, mut r: Vec<f64>) -> Vec<f64> {
    let n = r.len();
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| g[a][c].abs().total_cmp(&g[b][c].abs())).unwrap();
        g.swap(c, p);
        r.swap(c, p);
        for k in c + 1..n {
            let f = g[k][c] / g[c][c];
            for j in c..n {
                g[k][j] -= f * g[c][j];
            }
            r[k] -= f * r[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|j| g[c][j] * x[j]).sum();
        x[c] = (r[c] - s) / g[c][c];
    }
    x
}

/// Frobenius norm of the rows of `z` minus their projections onto the span
/// of the rows listed in `basis`, through the normal equations.
pub fn normal_equation_error(z: &Matrix, basis: &[usize]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let g: Vec<Vec<f64>> = basis.iter().map(|&a| basis.iter().map(|&b| dot(z.row(a), z.row(b))).collect()).collect();
    let mut total = 0.0;
    for i in 0..z.rows() {
        let rhs: Vec<f64> = basis.iter().map(|&a| dot(z.row(a), z.row(i))).collect();
        let c = gauss_solve(g.clone(), rhs);
        for s in 0..z.cols() {
            let fit: f64 = basis.iter().zip(&c).map(|(&a, ci)| ci * z[(a, s)]).sum();
            total += (z[(i, s)] - fit).powi(2);
        }
    }
    total.sqrt()
}
