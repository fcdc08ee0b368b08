use crate::error::{Error, Result};
use crate::matrix::{dot, norm2};

use super::sparse::SparseOperator;

/// Relative residual target of [`solve_spd`].
pub const CG_TOL: f64 = 1e-10;

/// Imposes `x[nodes[k]] = values[k]` by symmetric elimination.
///
/// Known values are moved to the right-hand side of the free rows, constrained
/// rows and columns are zeroed, and their diagonal set to one.
pub fn apply_dirichlet(a: &mut SparseOperator, b: &mut [f64], nodes: &[usize], values: &[f64]) -> Result<()> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::shape(format!("rhs of length {} for operator of dim {n}", b.len())));
    }
    if nodes.len() != values.len() {
        return Err(Error::invalid(format!("{} constrained dofs but {} values", nodes.len(), values.len())));
    }
    if let Some(&k) = nodes.iter().find(|&&k| k >= n) {
        return Err(Error::invalid(format!("constrained dof {k} out of range for dim {n}")));
    }
    if nodes.is_empty() {
        return Ok(());
    }
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for (&k, &v) in nodes.iter().zip(values) {
        fixed[k] = Some(v);
    }
    let row_ptr = a.row_ptr().to_vec();
    let col_idx = a.col_idx().to_vec();
    let vals = a.values_mut();
    for i in 0..n {
        let range = row_ptr[i]..row_ptr[i + 1];
        if fixed[i].is_some() {
            for k in range {
                vals[k] = if col_idx[k] == i { 1.0 } else { 0.0 };
            }
        } else {
            for k in range {
                if let Some(g) = fixed[col_idx[k]] {
                    b[i] -= vals[k] * g;
                    vals[k] = 0.0;
                }
            }
        }
    }
    for (i, f) in fixed.iter().enumerate() {
        if let Some(g) = f {
            b[i] = *g;
        }
    }
    Ok(())
}

/// Applies Dirichlet data, solves, and writes the prescribed values back so
/// constrained entries are exact rather than CG-accurate.
pub fn solve_constrained(mut a: SparseOperator, mut b: Vec<f64>, nodes: &[usize], values: &[f64]) -> Result<Vec<f64>> {
    apply_dirichlet(&mut a, &mut b, nodes, values)?;
    let mut x = solve_spd(&a, &b)?;
    for (&k, &v) in nodes.iter().zip(values) {
        x[k] = v;
    }
    Ok(x)
}

/// Solves `A x = b` for symmetric positive-definite `A` with Jacobi-preconditioned CG.
pub fn solve_spd(a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::shape(format!("rhs of length {} for operator of dim {n}", b.len())));
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let scale = bnorm.max(f64::MIN_POSITIVE);
    let diag = a.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::NotPositiveDefinite { iteration: 0 });
    }
    let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let cap = 50 * n.max(1);
    let mut it = 0;
    loop {
        let rel = norm2(&r) / scale;
        if rel <= CG_TOL {
            // The recursive residual drifts; confirm against the true one.
            a.matvec_into(&x, &mut ap);
            let true_res: f64 = ap.iter().zip(b).map(|(ax, b)| (ax - b) * (ax - b)).sum::<f64>().sqrt() / scale;
            if true_res <= CG_TOL {
                return Ok(x);
            }
            for i in 0..n {
                r[i] = b[i] - ap[i];
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        if it >= cap {
            return Err(Error::SolverFailure { iterations: it, residual: rel });
        }
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite { iteration: it });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
    }
}
