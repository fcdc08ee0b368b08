use crate::error::{Error, Result};

use super::mesh::Mesh;

/// Square matrix in compressed sparse row form.
///
/// Column indices within a row are sorted and unique, which lets assembly
/// locate entries with a binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Builds an operator with the given structure and all values zero.
    pub fn from_pattern(dim: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Result<Self> {
        if row_ptr.len() != dim + 1 || row_ptr[0] != 0 || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(Error::invalid("inconsistent CSR row offsets"));
        }
        for r in 0..dim {
            let row = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&c| c >= dim) {
                return Err(Error::invalid(format!("row {r} has unsorted or out-of-range columns")));
            }
        }
        let nnz = col_idx.len();
        Ok(Self { dim, row_ptr, col_idx, values: vec![0.0; nnz] })
    }

    /// Sparsity pattern of P1 forms on `mesh` with `components` unknowns per node,
    /// numbered component-blocked (`c * node_count + node`).
    pub fn mesh_pattern(mesh: &Mesh, components: usize) -> Self {
        let n = mesh.node_count();
        let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for tri in mesh.triangles() {
            for &a in tri {
                for &b in tri {
                    adj[a].push(b);
                }
            }
        }
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
        }
        let dim = n * components;
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for _ in 0..components {
            for row in &adj {
                for c in 0..components {
                    col_idx.extend(row.iter().map(|&j| c * n + j));
                }
                row_ptr.push(col_idx.len());
            }
        }
        let nnz = col_idx.len();
        Self { dim, row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            col_idx: (0..dim).collect(),
            values: vec![1.0; dim],
        }
    }

    /// Converts a dense square matrix, keeping only nonzero entries (and the diagonal).
    pub fn from_dense(dim: usize, a: &[f64]) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(Error::shape(format!("{} entries for a {dim}x{dim} matrix", a.len())));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                let v = a[i * dim + j];
                if v != 0.0 || i == j {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { dim, row_ptr, col_idx, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Position of entry `(i, j)` in the value array, if it is in the pattern.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    /// Adds `v` to entry `(i, j)`. Panics if the entry is outside the pattern,
    /// which would be an assembly bug rather than a user error.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.find(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::shape(format!("vector of length {} for operator of dim {}", x.len(), self.dim)));
        }
        let mut y = vec![0.0; self.dim];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        let y = self.matvec(x)?;
        Ok(crate::matrix::dot(x, &y))
    }

    /// Returns `a * self + b * other`; both must share a pattern.
    pub fn linear_combination(&self, a: f64, other: &SparseOperator, b: f64) -> Result<Self> {
        if self.row_ptr != other.row_ptr || self.col_idx != other.col_idx {
            return Err(Error::invalid("operators have different sparsity patterns"));
        }
        let mut out = self.clone();
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o = a * *o + b * v;
        }
        Ok(out)
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[i * n + self.col_idx[k]] += self.values[k];
            }
        }
        d
    }

    /// Largest `|A_ij − A_ji|` over stored entries.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_is_structurally_symmetric() {
        let m = Mesh::new(3, 2, 1.0, 1.0).unwrap();
        for comps in [1, 2] {
            let a = SparseOperator::mesh_pattern(&m, comps);
            assert_eq!(a.dim(), comps * m.node_count());
            for i in 0..a.dim() {
                for k in a.row_ptr()[i]..a.row_ptr()[i + 1] {
                    assert!(a.find(a.col_idx()[k], i).is_some());
                }
            }
        }
    }

    #[test]
    fn dense_round_trip_and_matvec() {
        let d = vec![2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0];
        let a = SparseOperator::from_dense(3, &d).unwrap();
        assert_eq!(a.nnz(), 7);
        assert_eq!(a.to_dense(), d);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 0.0, 1.0]);
        assert!(a.matvec(&[1.0]).is_err());
    }

    #[test]
    fn bad_pattern_rejected() {
        assert!(SparseOperator::from_pattern(2, vec![0, 1, 2], vec![1, 0]).is_ok());
        assert!(SparseOperator::from_pattern(2, vec![0, 2, 2], vec![1, 0]).is_err());
        assert!(SparseOperator::from_pattern(2, vec![0, 1, 3], vec![0, 1]).is_err());
    }
}
