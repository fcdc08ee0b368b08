use crate::error::Result;

use super::field::NodalField;
use super::mesh::Mesh;

/// Points further than this outside the closed domain are rejected.
pub const SNAP_TOL: f64 = 1e-12;

/// Precomputed barycentric interpolation from mesh nodes to a fixed point set.
#[derive(Debug, Clone)]
pub struct PointInterpolator {
    node_count: usize,
    stencils: Vec<([usize; 3], [f64; 3])>,
}

impl PointInterpolator {
    pub fn new(mesh: &Mesh, points: &[[f64; 2]]) -> Result<Self> {
        let stencils = points
            .iter()
            .map(|p| {
                let (t, w) = mesh.locate(p[0], p[1], SNAP_TOL)?;
                Ok((mesh.triangles()[t], w))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { node_count: mesh.node_count(), stencils })
    }

    pub fn point_count(&self) -> usize {
        self.stencils.len()
    }

    /// Interpolated values, component-blocked: every point of component 0, then component 1.
    pub fn apply(&self, field: &NodalField) -> Result<Vec<f64>> {
        if field.node_count() != self.node_count {
            return Err(crate::error::Error::MeshMismatch(format!(
                "field has {} nodes, interpolator built for {}",
                field.node_count(),
                self.node_count
            )));
        }
        let mut out = Vec::with_capacity(self.stencils.len() * field.components());
        for c in 0..field.components() {
            let v = field.component(c);
            out.extend(self.stencils.iter().map(|(n, w)| w[0] * v[n[0]] + w[1] * v[n[1]] + w[2] * v[n[2]]));
        }
        Ok(out)
    }
}

/// Barycentric P1 interpolation of `field` at `points` (component-blocked output).
pub fn interpolate_at_points(mesh: &Mesh, field: &NodalField, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    PointInterpolator::new(mesh, points)?.apply(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn exact_at_nodes() {
        let mesh = Mesh::new(4, 3, 1.0, 2.0).unwrap();
        let f = NodalField::from_fn(&mesh, |x, y| (3.0 * x).sin() + y * y);
        let v = interpolate_at_points(&mesh, &f, mesh.nodes()).unwrap();
        assert_eq!(v, f.values());
    }

    #[test]
    fn centroid_gets_vertex_mean() {
        let mesh = Mesh::new(3, 3, 1.0, 1.0).unwrap();
        let f = NodalField::from_fn(&mesh, |x, y| (x * 7.0).cos() * y.exp());
        for tri in mesh.triangles() {
            let p = tri.map(|i| mesh.nodes()[i]);
            let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
            let v = interpolate_at_points(&mesh, &f, &[c]).unwrap()[0];
            let mean = tri.iter().map(|&i| f.values()[i]).sum::<f64>() / 3.0;
            assert!((v - mean).abs() < 1e-13);
        }
    }

    #[test]
    fn outside_point_is_named() {
        let mesh = Mesh::new(2, 2, 1.0, 1.0).unwrap();
        let f = NodalField::constant(&mesh, 1.0);
        match interpolate_at_points(&mesh, &f, &[[0.5, 1.0 + 1e-9]]) {
            Err(Error::OutOfDomain { x, y }) => assert_eq!((x, y), (0.5, 1.0 + 1e-9)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(interpolate_at_points(&mesh, &f, &[[1.0 + 1e-13, -1e-13]]).is_ok());
    }

    #[test]
    fn two_components_block_layout() {
        let mesh = Mesh::new(2, 2, 1.0, 1.0).unwrap();
        let n = mesh.node_count();
        let mut vals = vec![1.0; n];
        vals.extend(vec![2.0; n]);
        let f = NodalField::new(vals, 2).unwrap();
        let v = interpolate_at_points(&mesh, &f, &[[0.3, 0.3], [0.9, 0.1]]).unwrap();
        assert_eq!(v.len(), 4);
        assert!((v[0] - 1.0).abs() < 1e-15 && (v[3] - 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn linear_fields_reproduced(x in 0.0..2.0f64, y in 0.0..1.0f64, nx in 1usize..8, ny in 1usize..8) {
            let mesh = Mesh::new(nx, ny, 2.0, 1.0).unwrap();
            let f = NodalField::from_fn(&mesh, |x, y| 2.0 * x + 3.0 * y);
            let v = interpolate_at_points(&mesh, &f, &[[x, y]]).unwrap()[0];
            prop_assert!((v - (2.0 * x + 3.0 * y)).abs() < 1e-12);
        }
    }
}
