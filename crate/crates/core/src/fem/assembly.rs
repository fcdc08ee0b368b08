use crate::error::{Error, Result};

use super::field::NodalField;
use super::mesh::Mesh;
use super::quadrature::{GAUSS_3, TRIANGLE_6};
use super::sparse::SparseOperator;

/// One side of the rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

impl Edge {
    /// Node indices along this side, in increasing coordinate order.
    pub fn nodes(self, mesh: &Mesh) -> Vec<usize> {
        let (nx, ny) = (mesh.nx(), mesh.ny());
        match self {
            Edge::Left => (0..=ny).map(|j| j * (nx + 1)).collect(),
            Edge::Right => (0..=ny).map(|j| j * (nx + 1) + nx).collect(),
            Edge::Bottom => (0..=nx).collect(),
            Edge::Top => (0..=nx).map(|i| ny * (nx + 1) + i).collect(),
        }
    }
}

/// Consistent P1 mass matrix.
pub fn assemble_mass(mesh: &Mesh) -> SparseOperator {
    let mut m = SparseOperator::mesh_pattern(mesh, 1);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        for (a, &i) in tri.iter().enumerate() {
            for (b, &j) in tri.iter().enumerate() {
                m.add(i, j, if a == b { area / 6.0 } else { area / 12.0 });
            }
        }
    }
    m
}

fn centroid_value(field: &[f64], tri: &[usize; 3]) -> f64 {
    (field[tri[0]] + field[tri[1]] + field[tri[2]]) / 3.0
}

/// Stiffness matrix of `∫ c ∇φ_i · ∇φ_j`, with `c` taken at each element centroid.
pub fn assemble_stiffness(mesh: &Mesh, coeff: &NodalField) -> Result<SparseOperator> {
    coeff.check(mesh, 1)?;
    let c = coeff.values();
    let mut k = SparseOperator::mesh_pattern(mesh, 1);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.hat_gradients(t);
        let s = centroid_value(c, tri) * mesh.area(t);
        for (a, &i) in tri.iter().enumerate() {
            for (b, &j) in tri.iter().enumerate() {
                k.add(i, j, s * (g[a][0] * g[b][0] + g[a][1] * g[b][1]));
            }
        }
    }
    Ok(k)
}

/// Lamé parameters `(λ, μ)` from Young's modulus and Poisson ratio.
pub fn lame(e: f64, nu: f64) -> (f64, f64) {
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    (lambda, mu)
}

/// Plane-strain stiffness on the component-blocked displacement space.
pub fn assemble_elasticity_stiffness(mesh: &Mesh, youngs: &NodalField, nu: f64) -> Result<SparseOperator> {
    youngs.check(mesh, 1)?;
    if !(nu > 0.0 && nu < 0.5) {
        return Err(Error::invalid(format!("Poisson ratio must lie in (0, 0.5), got {nu}")));
    }
    if let Some(v) = youngs.values().iter().find(|&&v| v <= 0.0) {
        return Err(Error::invalid(format!("Young's modulus must be positive, found {v}")));
    }
    let n = mesh.node_count();
    let e = youngs.values();
    let mut k = SparseOperator::mesh_pattern(mesh, 2);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.hat_gradients(t);
        let area = mesh.area(t);
        let (lambda, mu) = lame(centroid_value(e, tri), nu);
        let d = [[lambda + 2.0 * mu, lambda, 0.0], [lambda, lambda + 2.0 * mu, 0.0], [0.0, 0.0, mu]];
        // Strain rows (e11, e22, 2 e12) for local dofs ordered (ux_a, uy_a).
        let mut b = [[0.0; 6]; 3];
        for a in 0..3 {
            b[0][2 * a] = g[a][0];
            b[1][2 * a + 1] = g[a][1];
            b[2][2 * a] = g[a][1];
            b[2][2 * a + 1] = g[a][0];
        }
        let mut db = [[0.0; 6]; 3];
        for r in 0..3 {
            for c in 0..6 {
                db[r][c] = (0..3).map(|s| d[r][s] * b[s][c]).sum();
            }
        }
        let global = |l: usize| (l % 2) * n + tri[l / 2];
        for p in 0..6 {
            for q in 0..6 {
                let v: f64 = (0..3).map(|r| b[r][p] * db[r][q]).sum();
                k.add(global(p), global(q), area * v);
            }
        }
    }
    Ok(k)
}

/// Load vector `∫ f φ_i` using a degree-4 triangle rule.
pub fn load_vector(mesh: &Mesh, f: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut rhs = vec![0.0; mesh.node_count()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        let p = tri.map(|i| mesh.nodes()[i]);
        for (l, w) in TRIANGLE_6.iter() {
            let x = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
            let y = l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1];
            let fv = f(x, y) * w * area;
            for a in 0..3 {
                rhs[tri[a]] += fv * l[a];
            }
        }
    }
    rhs
}

/// Boundary load `∫_edge g φ_i ds`, three Gauss points per mesh edge.
pub fn edge_load(mesh: &Mesh, edge: Edge, g: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut rhs = vec![0.0; mesh.node_count()];
    let nodes = edge.nodes(mesh);
    for pair in nodes.windows(2) {
        let (a, b) = (mesh.nodes()[pair[0]], mesh.nodes()[pair[1]]);
        let half = 0.5 * ((b[0] - a[0]).hypot(b[1] - a[1]));
        for &(xi, w) in GAUSS_3.iter() {
            let s = 0.5 * (1.0 + xi);
            let x = a[0] + s * (b[0] - a[0]);
            let y = a[1] + s * (b[1] - a[1]);
            let gv = g(x, y) * w * half;
            rhs[pair[0]] += gv * (1.0 - s);
            rhs[pair[1]] += gv * s;
        }
    }
    rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::Mesh;

    #[test]
    fn mass_element_on_unit_right_triangle() {
        // A single cell of the unit square holds two unit right triangles.
        let mesh = Mesh::new(1, 1, 1.0, 1.0).unwrap();
        let t = mesh.triangles()[0];
        let area = mesh.area(0);
        assert_eq!(area, 0.5);
        let mut single = SparseOperator::mesh_pattern(&mesh, 1);
        for (a, &i) in t.iter().enumerate() {
            for (b, &j) in t.iter().enumerate() {
                single.add(i, j, if a == b { area / 6.0 } else { area / 12.0 });
            }
        }
        assert!((single.get(t[0], t[0]) - 1.0 / 12.0).abs() < 1e-15);
        assert!((single.get(t[0], t[1]) - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn mass_total_equals_area() {
        for (nx, ny, l1, l2) in [(1, 1, 1.0, 1.0), (5, 3, 2.0, 0.7), (20, 20, 1.0, 1.0)] {
            let m = assemble_mass(&Mesh::new(nx, ny, l1, l2).unwrap());
            assert!((m.sum() - l1 * l2).abs() < 1e-12 * l1 * l2);
            assert_eq!(m.asymmetry(), 0.0);
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_scale_linearly() {
        let mesh = Mesh::new(6, 4, 1.0, 2.0).unwrap();
        let k1 = assemble_stiffness(&mesh, &NodalField::constant(&mesh, 1.0)).unwrap();
        let k2 = assemble_stiffness(&mesh, &NodalField::constant(&mesh, 2.0)).unwrap();
        let ones = vec![1.0; mesh.node_count()];
        assert!(k1.matvec(&ones).unwrap().iter().all(|r| r.abs() < 1e-12));
        for (a, b) in k1.values().iter().zip(k2.values()) {
            assert_eq!(*b, 2.0 * a);
        }
        assert!(k1.asymmetry() <= 1e-14);
    }

    #[test]
    fn stiffness_rejects_vector_coefficient() {
        let mesh = Mesh::new(2, 2, 1.0, 1.0).unwrap();
        assert!(assemble_stiffness(&mesh, &NodalField::zeros(&mesh, 2)).is_err());
    }

    #[test]
    fn stiffness_patch_test_linear_field() {
        let mesh = Mesh::new(5, 5, 1.0, 1.0).unwrap();
        let k = assemble_stiffness(&mesh, &NodalField::constant(&mesh, 1.0)).unwrap();
        let u: Vec<f64> = mesh.nodes().iter().map(|p| p[0]).collect();
        let r = k.matvec(&u).unwrap();
        for (i, f) in mesh.boundary().iter().enumerate() {
            if !f.any() {
                assert!(r[i].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn elasticity_rigid_motions_in_kernel() {
        let mesh = Mesh::new(4, 3, 1.0, 1.0).unwrap();
        let e = NodalField::from_fn(&mesh, |x, y| 1.0 + x + 2.0 * y);
        let k = assemble_elasticity_stiffness(&mesh, &e, 0.25).unwrap();
        let n = mesh.node_count();
        let mut trans = vec![0.0; 2 * n];
        trans[..n].fill(1.0);
        let mut rot = vec![0.0; 2 * n];
        for (i, p) in mesh.nodes().iter().enumerate() {
            rot[i] = -p[1];
            rot[n + i] = p[0];
        }
        for u in [trans, rot] {
            assert!(k.matvec(&u).unwrap().iter().all(|r| r.abs() < 1e-10));
        }
        assert!(k.asymmetry() < 1e-12);
    }

    #[test]
    fn elasticity_uniform_strain_energy() {
        let (l1, l2) = (1.5, 0.8);
        let mesh = Mesh::new(3, 5, l1, l2).unwrap();
        let k = assemble_elasticity_stiffness(&mesh, &NodalField::constant(&mesh, 1.0), 0.25).unwrap();
        let n = mesh.node_count();
        let mut u = vec![0.0; 2 * n];
        for (i, p) in mesh.nodes().iter().enumerate() {
            u[i] = p[0];
        }
        // Strain e = diag(1, 0): energy density λ tr(e)²/2 + μ e:e with λ = 0.4, μ = 0.4.
        let (lambda, mu) = (0.4, 0.4);
        let expected = (0.5 * lambda + mu) * l1 * l2;
        let energy = 0.5 * k.quadratic_form(&u).unwrap();
        assert!((energy - expected).abs() < 1e-10);
    }

    #[test]
    fn elasticity_rejects_bad_inputs() {
        let mesh = Mesh::new(2, 2, 1.0, 1.0).unwrap();
        let e = NodalField::constant(&mesh, 1.0);
        assert!(assemble_elasticity_stiffness(&mesh, &e, 0.5).is_err());
        assert!(assemble_elasticity_stiffness(&mesh, &NodalField::constant(&mesh, 0.0), 0.25).is_err());
    }

    #[test]
    fn loads_integrate_constants_and_linears() {
        let mesh = Mesh::new(4, 3, 2.0, 1.0).unwrap();
        let total: f64 = load_vector(&mesh, &|x, y| 1.0 + x * y).iter().sum();
        // ∫∫ (1 + xy) over [0,2]x[0,1] = 2 + 1.
        assert!((total - 3.0).abs() < 1e-12);
        let right: f64 = edge_load(&mesh, Edge::Right, &|_, y| y * y).iter().sum();
        assert!((right - 1.0 / 3.0).abs() < 1e-12);
        let top = edge_load(&mesh, Edge::Top, &|x, _| x);
        assert!((top.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}
