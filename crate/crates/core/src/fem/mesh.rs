use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used to classify nodes as lying on a boundary edge.
pub const BOUNDARY_TOL: f64 = 1e-10;

/// Per-node boundary edge flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BoundaryFlags(u8);

impl BoundaryFlags {
    pub const LEFT: u8 = 1;
    pub const RIGHT: u8 = 2;
    pub const BOTTOM: u8 = 4;
    pub const TOP: u8 = 8;

    pub fn left(self) -> bool {
        self.0 & Self::LEFT != 0
    }
    pub fn right(self) -> bool {
        self.0 & Self::RIGHT != 0
    }
    pub fn bottom(self) -> bool {
        self.0 & Self::BOTTOM != 0
    }
    pub fn top(self) -> bool {
        self.0 & Self::TOP != 0
    }
    pub fn any(self) -> bool {
        self.0 != 0
    }
}

/// Mesh size parameters; everything else about a [`Mesh`] is derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
}

/// Structured triangulation of the rectangle `(0, L1) x (0, L2)`.
///
/// Nodes are numbered row-major, `index = j * (nx + 1) + i` for the node at
/// `(i * L1 / nx, j * L2 / ny)`. Each grid cell is split into two triangles
/// along its lower-left to upper-right diagonal; both are counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    params: MeshParams,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryFlags>,
}

impl Mesh {
    pub fn new(nx: usize, ny: usize, l1: f64, l2: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid(format!("mesh cell counts must be positive, got {nx}x{ny}")));
        }
        if !(l1 > 0.0 && l2 > 0.0) || !l1.is_finite() || !l2.is_finite() {
            return Err(Error::invalid(format!("domain lengths must be positive, got {l1}x{l2}")));
        }
        let params = MeshParams { nx, ny, l1, l2 };
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary = Vec::with_capacity(nodes.capacity());
        for j in 0..=ny {
            for i in 0..=nx {
                let x = i as f64 * l1 / nx as f64;
                let y = j as f64 * l2 / ny as f64;
                nodes.push([x, y]);
                let mut f = 0u8;
                if x.abs() < BOUNDARY_TOL {
                    f |= BoundaryFlags::LEFT;
                }
                if (x - l1).abs() < BOUNDARY_TOL {
                    f |= BoundaryFlags::RIGHT;
                }
                if y.abs() < BOUNDARY_TOL {
                    f |= BoundaryFlags::BOTTOM;
                }
                if (y - l2).abs() < BOUNDARY_TOL {
                    f |= BoundaryFlags::TOP;
                }
                boundary.push(BoundaryFlags(f));
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        for j in 0..ny {
            for i in 0..nx {
                let n00 = idx(i, j);
                let n10 = idx(i + 1, j);
                let n01 = idx(i, j + 1);
                let n11 = idx(i + 1, j + 1);
                triangles.push([n00, n10, n11]);
                triangles.push([n00, n11, n01]);
            }
        }
        Ok(Self { params, nodes, triangles, boundary })
    }

    pub fn from_params(p: MeshParams) -> Result<Self> {
        Self::new(p.nx, p.ny, p.l1, p.l2)
    }

    pub fn params(&self) -> MeshParams {
        self.params
    }
    pub fn nx(&self) -> usize {
        self.params.nx
    }
    pub fn ny(&self) -> usize {
        self.params.ny
    }
    pub fn l1(&self) -> f64 {
        self.params.l1
    }
    pub fn l2(&self) -> f64 {
        self.params.l2
    }
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }
    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
    pub fn boundary(&self) -> &[BoundaryFlags] {
        &self.boundary
    }

    /// Twice the signed area of triangle `t`.
    pub fn signed_area2(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * self.signed_area2(t)
    }

    /// Gradients of the three P1 hat functions on triangle `t` (constant per element).
    pub fn hat_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let inv = 1.0 / self.signed_area2(t);
        [
            [(pb[1] - pc[1]) * inv, (pc[0] - pb[0]) * inv],
            [(pc[1] - pa[1]) * inv, (pa[0] - pc[0]) * inv],
            [(pa[1] - pb[1]) * inv, (pb[0] - pa[0]) * inv],
        ]
    }

    /// Cell size along each axis.
    pub fn spacing(&self) -> (f64, f64) {
        (self.params.l1 / self.params.nx as f64, self.params.l2 / self.params.ny as f64)
    }

    /// Locates the triangle containing `(x, y)` together with its barycentric
    /// weights. Points within `snap` of the closed domain are clamped onto it.
    pub fn locate(&self, x: f64, y: f64, snap: f64) -> Result<(usize, [f64; 3])> {
        let MeshParams { nx, ny, l1, l2 } = self.params;
        if !(x.is_finite() && y.is_finite())
            || x < -snap
            || y < -snap
            || x > l1 + snap
            || y > l2 + snap
        {
            return Err(Error::OutOfDomain { x, y });
        }
        let xc = x.clamp(0.0, l1);
        let yc = y.clamp(0.0, l2);
        // Grid coordinates; values within rounding of a grid line are snapped
        // onto it so interpolation is exact at nodes.
        let snap_line = |u: f64| if (u - u.round()).abs() < 1e-12 { u.round() } else { u };
        let u = snap_line(xc * nx as f64 / l1);
        let v = snap_line(yc * ny as f64 / l2);
        let i = (u.floor() as usize).min(nx - 1);
        let j = (v.floor() as usize).min(ny - 1);
        let s = u - i as f64;
        let r = v - j as f64;
        let cell = 2 * (j * nx + i);
        // Lower triangle (n00, n10, n11) holds s >= r.
        if s >= r {
            Ok((cell, [1.0 - s, s - r, r]))
        } else {
            Ok((cell + 1, [1.0 - r, s, r - s]))
        }
    }
}
