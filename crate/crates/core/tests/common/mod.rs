//! Dense reference computations used by the integration tests. Nothing here
//! goes through the FFT or the solvers it checks.
#![allow(dead_code)]

use std::f64::consts::FRAC_1_SQRT_2;

use gridfit::covariance::{family, CorrelationModel, Kernel, Theta};
use gridfit::lattice::{EmbeddingSpec, LatticeSpec};
use nalgebra::{DMatrix, DVector};

pub fn embedding(n: usize, r_factor: f64) -> EmbeddingSpec {
    EmbeddingSpec::new(LatticeSpec::new(n, n, FRAC_1_SQRT_2).unwrap(), r_factor).unwrap()
}

pub fn model(emb: &EmbeddingSpec, name: &str, cutoff: bool) -> CorrelationModel {
    CorrelationModel::for_embedding(family(name).unwrap(), emb, cutoff).unwrap()
}

pub fn kernel(emb: &EmbeddingSpec, model: &CorrelationModel, theta: &Theta) -> Kernel {
    model.kernel(theta, emb.base.diameter()).unwrap()
}

/// Shortest distance between embedding sites `a` and `b` over the nine
/// periodic images nearest the origin.
pub fn image_distance(emb: &EmbeddingSpec, a: usize, b: usize) -> f64 {
    let (n1, n2) = (emb.n1 as f64, emb.n2 as f64);
    let (ai, aj) = (a / emb.n2, a % emb.n2);
    let (bi, bj) = (b / emb.n2, b % emb.n2);
    let mut best = f64::INFINITY;
    for s in [-1.0, 0.0, 1.0] {
        for t in [-1.0, 0.0, 1.0] {
            let di = ai as f64 - bi as f64 + s * n1;
            let dj = aj as f64 - bj as f64 + t * n2;
            best = best.min((di * di + dj * dj).sqrt());
        }
    }
    best * emb.base.delta
}

/// The embedded correlation matrix, entry by entry.
pub fn dense_embedded(emb: &EmbeddingSpec, k: &Kernel) -> DMatrix<f64> {
    let n = emb.len();
    DMatrix::from_fn(n, n, |a, b| k.corr(image_distance(emb, a, b)))
}

/// Eigenvalues of the BCCB matrix with first column `c` by direct summation
/// of its two-dimensional DFT. `c` must be symmetric so the sums are real.
pub fn direct_dft(c: &[f64], n1: usize, n2: usize) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let mut out = vec![0.0; n1 * n2];
    for k1 in 0..n1 {
        for k2 in 0..n2 {
            let mut s = 0.0;
            for j1 in 0..n1 {
                for j2 in 0..n2 {
                    let ph = tau * ((k1 * j1) as f64 / n1 as f64 + (k2 * j2) as f64 / n2 as f64);
                    s += c[j1 * n2 + j2] * ph.cos();
                }
            }
            out[k1 * n2 + k2] = s;
        }
    }
    out
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn scalar_rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Mean and covariance of `Z_u | Z_o = z_o` for `Z ~ N(μ1, σ²C)`.
pub fn conditional_moments(c: &DMatrix<f64>, obs: &[usize], unobs: &[usize], mu: f64, sigma2: f64, z_o: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let coo = submatrix(c, obs, obs);
    let cuo = submatrix(c, unobs, obs);
    let cuu = submatrix(c, unobs, unobs);
    let inv = coo.try_inverse().unwrap();
    let resid = vector(z_o).add_scalar(-mu);
    let mean = (&cuo * &inv * resid).add_scalar(mu);
    let cov = (cuu - &cuo * &inv * cuo.transpose()) * sigma2;
    (mean, cov)
}

/// `ln N(z; μ1, Σ)` through an LU determinant and an explicit inverse.
pub fn gaussian_loglik(z: &[f64], mu: f64, sigma: &DMatrix<f64>) -> f64 {
    let n = z.len() as f64;
    let r = vector(z).add_scalar(-mu);
    let det = sigma.clone().lu().determinant();
    let inv = sigma.clone().try_inverse().unwrap();
    let q = (r.transpose() * inv * &r)[(0, 0)];
    -0.5 * n * (std::f64::consts::TAU).ln() - 0.5 * det.ln() - 0.5 * q
}

/// Dense correlation among lattice points `(i, j)` spaced `delta` apart,
/// unit nugget-free `φ` off the diagonal and `1 + c` on it.
pub fn dense_lattice_corr(points: &[(usize, usize)], delta: f64, phi: impl Fn(f64) -> f64, nugget: f64) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            1.0 + nugget
        } else {
            let di = points[a].0 as f64 - points[b].0 as f64;
            let dj = points[a].1 as f64 - points[b].1 as f64;
            phi(delta * (di * di + dj * dj).sqrt())
        }
    })
}
