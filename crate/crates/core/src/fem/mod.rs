//! P1 finite elements on structured triangulations of a rectangle.

mod assembly;
mod field;
mod interp;
mod mesh;
mod quadrature;
mod solver;
mod sparse;

pub use assembly::{assemble_elasticity_stiffness, assemble_mass, assemble_stiffness, edge_load, lame, load_vector, Edge};
pub use field::NodalField;
pub use interp::{interpolate_at_points, PointInterpolator, SNAP_TOL};
pub use mesh::{BoundaryFlags, Mesh, MeshParams, BOUNDARY_TOL};
pub use quadrature::{GAUSS_3, TRIANGLE_6};
pub use solver::{apply_dirichlet, solve_constrained, solve_spd, CG_TOL};
pub use sparse::SparseOperator;

/// Builds the structured mesh of `(0, l1) x (0, l2)` with `nx x ny` cells.
pub fn build_rect_mesh(nx: usize, ny: usize, l1: f64, l2: f64) -> crate::error::Result<Mesh> {
    Mesh::new(nx, ny, l1, l2)
}
