use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{Mesh, NodalField, PointInterpolator};

/// Resampling between mesh nodes and a uniform `n1 x n2` grid covering the
/// closed domain. Grid point `(i, j)` sits at `(i L1/(n1-1), j L2/(n2-1))` and
/// is stored at index `i * n2 + j`; multi-component grid data is channel-last.
#[derive(Debug, Clone)]
pub struct GridTransfer {
    mesh: Arc<Mesh>,
    n1: usize,
    n2: usize,
    coords: Vec<[f64; 2]>,
    to_grid: PointInterpolator,
    to_nodes: Vec<([usize; 4], [f64; 4])>,
}

impl GridTransfer {
    pub fn new(mesh: Arc<Mesh>, n1: usize, n2: usize) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::invalid(format!("grid needs at least 2x2 points, got {n1}x{n2}")));
        }
        let (l1, l2) = (mesh.l1(), mesh.l2());
        let mut coords = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                coords.push([i as f64 * l1 / (n1 - 1) as f64, j as f64 * l2 / (n2 - 1) as f64]);
            }
        }
        let to_grid = PointInterpolator::new(&mesh, &coords)?;
        let locate = |u: f64, n: usize| {
            let u = if (u - u.round()).abs() < 1e-12 { u.round() } else { u };
            let i = (u.floor().max(0.0) as usize).min(n - 2);
            (i, u - i as f64)
        };
        let to_nodes = mesh
            .nodes()
            .iter()
            .map(|p| {
                let (i, s) = locate(p[0] / l1 * (n1 - 1) as f64, n1);
                let (j, t) = locate(p[1] / l2 * (n2 - 1) as f64, n2);
                let idx = [i * n2 + j, (i + 1) * n2 + j, i * n2 + j + 1, (i + 1) * n2 + j + 1];
                let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t];
                (idx, w)
            })
            .collect();
        Ok(Self { mesh, n1, n2, coords, to_grid, to_nodes })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }
    pub fn n1(&self) -> usize {
        self.n1
    }
    pub fn n2(&self) -> usize {
        self.n2
    }
    pub fn point_count(&self) -> usize {
        self.n1 * self.n2
    }
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Barycentric interpolation onto the grid, channel-last.
    pub fn fem_to_grid(&self, field: &NodalField) -> Result<Vec<f64>> {
        field.check(&self.mesh, field.components())?;
        let blocked = self.to_grid.apply(field)?;
        let (np, d) = (self.point_count(), field.components());
        let mut out = vec![0.0; np * d];
        for c in 0..d {
            for p in 0..np {
                out[p * d + c] = blocked[c * np + p];
            }
        }
        Ok(out)
    }

    /// Bilinear interpolation from channel-last grid values back to the nodes.
    pub fn grid_to_fem(&self, grid: &[f64], components: usize) -> Result<NodalField> {
        if components == 0 || grid.len() != self.point_count() * components {
            return Err(Error::shape(format!(
                "grid data of length {} does not match {}x{}x{components}",
                grid.len(),
                self.n1,
                self.n2
            )));
        }
        let n = self.mesh.node_count();
        let mut values = vec![0.0; n * components];
        for c in 0..components {
            for (k, (idx, w)) in self.to_nodes.iter().enumerate() {
                values[c * n + k] = (0..4).map(|a| w[a] * grid[idx[a] * components + c]).sum();
            }
        }
        NodalField::new(values, components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_field_exact_both_ways() {
        let mesh = Arc::new(Mesh::new(7, 5, 2.0, 1.0).unwrap());
        let t = GridTransfer::new(mesh.clone(), 9, 6).unwrap();
        let f = NodalField::from_fn(&mesh, |x, y| 2.0 * x + 3.0 * y);
        let g = t.fem_to_grid(&f).unwrap();
        for (v, p) in g.iter().zip(t.coords()) {
            assert!((v - (2.0 * p[0] + 3.0 * p[1])).abs() < 1e-12);
        }
        let back = t.grid_to_fem(&g, 1).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_vector_field() {
        let mesh = Arc::new(Mesh::new(4, 4, 1.0, 1.0).unwrap());
        let t = GridTransfer::new(mesh.clone(), 5, 7).unwrap();
        let n = mesh.node_count();
        let mut v = vec![1.5; n];
        v.extend(vec![-2.0; n]);
        let g = t.fem_to_grid(&NodalField::new(v, 2).unwrap()).unwrap();
        for p in 0..t.point_count() {
            assert!((g[2 * p] - 1.5).abs() < 1e-14 && (g[2 * p + 1] + 2.0).abs() < 1e-14);
        }
        assert!(t.grid_to_fem(&g, 3).is_err());
    }

    #[test]
    fn rejects_degenerate_grid() {
        let mesh = Arc::new(Mesh::new(2, 2, 1.0, 1.0).unwrap());
        assert!(GridTransfer::new(mesh, 1, 5).is_err());
    }
}
