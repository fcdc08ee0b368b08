//! Column normalization and SVD projectors onto reduced subspaces.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Denominator guard of the normalizer.
pub const NORMALIZER_TOL: f64 = 1e-8;

/// Per-column centering and scaling, `(x - mean) / (std + tol)` with the
/// population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub tol: f64,
}

pub fn fit_normalizer(x: &Matrix) -> Result<Normalizer> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::invalid(format!("normalizer needs at least 2 samples, got {n}")));
    }
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; p];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n as f64).sqrt()).collect();
    Ok(Normalizer { mean, std, tol: NORMALIZER_TOL })
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::shape(format!("normalizer of width {} applied to length {len}", self.dim())));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / (s + self.tol)).collect())
    }

    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len())?;
        Ok(z.iter().zip(&self.mean).zip(&self.std).map(|((z, m), s)| z * (s + self.tol) + m).collect())
    }

    pub fn apply_rows(&self, x: &Matrix) -> Result<Matrix> {
        self.map_rows(x, Self::apply)
    }

    pub fn invert_rows(&self, z: &Matrix) -> Result<Matrix> {
        self.map_rows(z, Self::invert)
    }

    fn map_rows(&self, x: &Matrix, f: fn(&Self, &[f64]) -> Result<Vec<f64>>) -> Result<Matrix> {
        let mut data = Vec::with_capacity(x.rows() * x.cols());
        for i in 0..x.rows() {
            data.extend(f(self, x.row(i))?);
        }
        Matrix::from_vec(x.rows(), x.cols(), data)
    }
}

/// Orthonormal basis of the leading left singular subspace of a data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    /// `r x p`, rows orthonormal and ordered by decreasing singular value.
    pub basis: Matrix,
    /// Full singular spectrum of the fitted data, descending.
    pub singular_values: Vec<f64>,
}

/// Fits a rank-`r` projector to `xhat` (`N x p`, one sample per row).
pub fn fit_projector(xhat: &Matrix, r: usize) -> Result<Projector> {
    let (n, p) = xhat.shape();
    if r == 0 || r > n.min(p) {
        return Err(Error::invalid(format!("reduced dimension {r} outside 1..={}", n.min(p))));
    }
    // Samples as columns, A = p x N. The SVD runs on the square triangular
    // factor of a QR decomposition: the direct rectangular SVD loses accuracy
    // on rank-deficient data.
    let (u, sv) = if p >= n {
        let qr = DMatrix::from_fn(p, n, |i, j| xhat.get(j, i)).qr();
        let svd = qr.r().svd(true, false);
        (qr.q() * svd.u.expect("left singular vectors requested"), svd.singular_values)
    } else {
        // A = (QR)^T = R^T Q^T, so the left vectors of R^T are those of A.
        let qr = DMatrix::from_fn(n, p, |i, j| xhat.get(i, j)).qr();
        let svd = qr.r().transpose().svd(true, false);
        (svd.u.expect("left singular vectors requested"), svd.singular_values)
    };
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let singular_values: Vec<f64> = order.iter().map(|&k| sv[k]).collect();
    let mut basis = Matrix::zeros(r, p);
    for (row, &k) in order.iter().take(r).enumerate() {
        let col = u.column(k);
        // Make the largest-magnitude entry positive so the basis is reproducible.
        let mut big = 0;
        for i in 0..p {
            if col[i].abs() > col[big].abs() {
                big = i;
            }
        }
        let sign = if col[big] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..p {
            basis.set(row, i, sign * col[i]);
        }
    }
    Ok(Projector { basis, singular_values })
}

impl Projector {
    pub fn rank(&self) -> usize {
        self.basis.rows()
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!("projector of width {} applied to length {}", self.dim(), x.len())));
        }
        Ok((0..self.rank()).map(|k| crate::matrix::dot(self.basis.row(k), x)).collect())
    }

    pub fn lift(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.rank() {
            return Err(Error::shape(format!("projector of rank {} lifted from length {}", self.rank(), z.len())));
        }
        let mut x = vec![0.0; self.dim()];
        for (k, zk) in z.iter().enumerate() {
            for (xi, b) in x.iter_mut().zip(self.basis.row(k)) {
                *xi += zk * b;
            }
        }
        Ok(x)
    }

    /// Projects every row of `x` (`N x p` to `N x r`).
    pub fn project_rows(&self, x: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(x.rows() * self.rank());
        for i in 0..x.rows() {
            data.extend(self.project(x.row(i))?);
        }
        Matrix::from_vec(x.rows(), self.rank(), data)
    }

    pub fn lift_rows(&self, z: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(z.rows() * self.dim());
        for i in 0..z.rows() {
            data.extend(self.lift(z.row(i))?);
        }
        Matrix::from_vec(z.rows(), self.dim(), data)
    }
}

/// Spectrum table with raw values and both normalizations
/// (by the largest value, and as a fraction of total energy).
pub fn spectrum_csv(singular_values: &[f64]) -> String {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    let energy: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut out = String::from("mode,sigma,sigma_over_max,sigma_over_total_energy\n");
    for (k, s) in singular_values.iter().enumerate() {
        let by_max = if max > 0.0 { s / max } else { 0.0 };
        let by_energy = if energy > 0.0 { s * s / energy } else { 0.0 };
        let _ = writeln!(out, "{},{:e},{:e},{:e}", k + 1, s, by_max, by_energy);
    }
    out
}
