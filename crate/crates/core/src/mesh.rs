//! Uniform rectangular grids over `[0, lx] x [0, ly]`.
//!
//! Nodes are numbered row-major: node `k` sits at column `i = k mod (nx+1)`
//! and row `j = k / (nx+1)`, i.e. at coordinates `(i*hx, j*hy)`. That ordering
//! is the canonical DOF ordering shared by every operator and state vector in
//! this crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("domain lengths must be positive, got lx={lx}, ly={ly}")]
    NonPositiveLength { lx: f64, ly: f64 },
    #[error("need at least 2 cells per axis, got nx={nx}, ny={ny}")]
    TooFewCells { nx: usize, ny: usize },
    #[error("grid index (i={i}, j={j}) out of range for {nx}x{ny} cells")]
    IndexOutOfRange { i: usize, j: usize, nx: usize, ny: usize },
}

/// One side of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];
}

/// Classification of a node by its position on the domain boundary.
///
/// A corner carries both incident sides, horizontal first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Interior,
    Edge(Side),
    Corner(Side, Side),
}

impl BoundaryTag {
    pub fn is_boundary(&self) -> bool {
        !matches!(self, BoundaryTag::Interior)
    }

    /// Sides this node lies on (empty for interior nodes).
    pub fn sides(&self) -> impl Iterator<Item = Side> {
        let (a, b) = match *self {
            BoundaryTag::Interior => (None, None),
            BoundaryTag::Edge(s) => (Some(s), None),
            BoundaryTag::Corner(s, t) => (Some(s), Some(t)),
        };
        a.into_iter().chain(b)
    }
}

/// Uniform tensor grid with row-major node numbering.
#[derive(Debug, Clone)]
pub struct StructuredMesh2D {
    lx: f64,
    ly: f64,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    nodes: Vec<[f64; 2]>,
    boundary_tags: Vec<BoundaryTag>,
}

impl StructuredMesh2D {
    /// Build the uniform grid with `nx` x `ny` cells over `[0,lx] x [0,ly]`.
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self, MeshError> {
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(MeshError::NonPositiveLength { lx, ly });
        }
        if nx < 2 || ny < 2 {
            return Err(MeshError::TooFewCells { nx, ny });
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary_tags = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([i as f64 * hx, j as f64 * hy]);
                let xs = if i == 0 {
                    Some(Side::Left)
                } else if i == nx {
                    Some(Side::Right)
                } else {
                    None
                };
                let ys = if j == 0 {
                    Some(Side::Bottom)
                } else if j == ny {
                    Some(Side::Top)
                } else {
                    None
                };
                boundary_tags.push(match (xs, ys) {
                    (None, None) => BoundaryTag::Interior,
                    (Some(s), None) => BoundaryTag::Edge(s),
                    (None, Some(s)) => BoundaryTag::Edge(s),
                    (Some(s), Some(t)) => BoundaryTag::Corner(s, t),
                });
            }
        }
        Ok(Self { lx, ly, nx, ny, hx, hy, nodes, boundary_tags })
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Discretization parameter `h = max(hx, hy)`.
    pub fn h_max(&self) -> f64 {
        self.hx.max(self.hy)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Row-major node index for grid coordinates `(i, j)`.
    pub fn dof_index(&self, i: usize, j: usize) -> Result<usize, MeshError> {
        if i > self.nx || j > self.ny {
            return Err(MeshError::IndexOutOfRange { i, j, nx: self.nx, ny: self.ny });
        }
        Ok(j * (self.nx + 1) + i)
    }

    /// Unchecked companion of [`dof_index`](Self::dof_index) for assembly loops.
    #[inline]
    pub(crate) fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.ny);
        j * (self.nx + 1) + i
    }

    /// Grid coordinates of node `k`; inverse of [`dof_index`](Self::dof_index).
    pub fn node_ij(&self, k: usize) -> (usize, usize) {
        debug_assert!(k < self.n_nodes());
        (k % (self.nx + 1), k / (self.nx + 1))
    }

    pub fn node_xy(&self, k: usize) -> [f64; 2] {
        self.nodes[k]
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn tag(&self, k: usize) -> BoundaryTag {
        self.boundary_tags[k]
    }

    pub fn boundary_tags(&self) -> &[BoundaryTag] {
        &self.boundary_tags
    }
}
