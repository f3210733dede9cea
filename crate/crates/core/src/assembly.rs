//! Spatial discretization on the uniform grid: the advection-diffusion
//! operator, the lumped mass matrix, and the pointwise (Nemytskii) reaction
//! terms with their diagonal Jacobians.
//!
//! Everything is mass-lumped: states are nodal values, the reaction acts
//! pointwise, and its Jacobian is diagonal. Homogeneous Neumann sides are
//! realized by ghost-node reflection; Dirichlet rows are replaced by the unit
//! diagonal and the boundary value is pinned by the time steppers.

use crate::mesh::StructuredMesh2D;
use crate::problem::SpdeProblem;
use crate::sparse::{DiagonalMatrix, SparseOperator};
use crate::vecops::all_finite;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Problem(#[from] crate::problem::ProblemError),
    #[error("only diagonal diffusion tensors are supported, got dxy={dxy}, dyx={dyx}")]
    NonDiagonalDiffusion { dxy: f64, dyx: f64 },
    #[error("state length {got} does not match mesh DOF count {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("state contains non-finite entries")]
    NonFiniteState,
    #[error("reaction evaluation produced non-finite entries")]
    NonFiniteReaction,
    #[error(transparent)]
    Sparse(#[from] crate::sparse::SparseError),
}

/// Diagonal mass matrix from nodal (trapezoidal) quadrature.
///
/// Weights are `hx*hy`, halved per boundary side, so they sum to the domain
/// area exactly up to rounding. The induced inner product is the discrete L2
/// pairing used for all error norms.
#[derive(Debug, Clone)]
pub struct LumpedMass {
    weights: Vec<f64>,
}

impl LumpedMass {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn dot(&self, u: &[f64], v: &[f64]) -> f64 {
        assert_eq!(u.len(), self.weights.len());
        assert_eq!(v.len(), self.weights.len());
        self.weights.iter().zip(u.iter().zip(v)).map(|(w, (a, b))| w * a * b).sum()
    }

    pub fn norm2(&self, u: &[f64]) -> f64 {
        self.dot(u, u)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.norm2(u).sqrt()
    }
}

pub fn assemble_lumped_mass(mesh: &StructuredMesh2D) -> LumpedMass {
    let cell = mesh.hx() * mesh.hy();
    let weights = (0..mesh.n_nodes())
        .map(|k| {
            let (i, j) = mesh.node_ij(k);
            let fx = if i == 0 || i == mesh.nx() { 0.5 } else { 1.0 };
            let fy = if j == 0 || j == mesh.ny() { 0.5 } else { 1.0 };
            cell * fx * fy
        })
        .collect();
    LumpedMass { weights }
}

/// Assemble the discrete operator for `div(D grad u) - q . grad u`.
///
/// Diffusion uses the 5-point stencil with `dxx/hx^2`, `dyy/hy^2`; advection
/// is first-order upwind per component. Out-of-domain neighbors on Neumann
/// sides reflect back into the grid. Rows of Dirichlet nodes carry a unit
/// diagonal and nothing else. Each free row stores its diagonal as the
/// negated sum of its off-diagonal entries, which together with the
/// diagonal-last accumulation in [`SparseOperator::apply`] makes constants
/// map to exact zeros under pure Neumann conditions.
pub fn assemble_operator(
    problem: &SpdeProblem,
    mesh: &StructuredMesh2D,
) -> Result<SparseOperator, AssemblyError> {
    let d = problem.diffusion;
    d.check_positive_definite()?;
    if !d.is_diagonal() {
        return Err(AssemblyError::NonDiagonalDiffusion { dxy: d.dxy, dyx: d.dyx });
    }
    let n = mesh.n_nodes();
    if let Some(v) = &problem.velocity {
        if v.len() != n {
            return Err(crate::problem::ProblemError::VelocitySize { got: v.len(), want: n }.into());
        }
    }
    let dirichlet = problem.dirichlet_values(mesh);
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let (hx, hy) = (mesh.hx(), mesh.hy());
    let cx = d.dxx / (hx * hx);
    let cy = d.dyy / (hy * hy);

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for k in 0..n {
        if dirichlet[k].is_some() {
            rows.push(vec![(k, 1.0)]);
            continue;
        }
        let (i, j) = mesh.node_ij(k);
        // neighbor column in direction `step`, reflected at Neumann sides
        let nb_x = |di: isize| -> usize {
            let ii = i as isize + di;
            let ii = if ii < 0 { 1 } else if ii > nx as isize { nx as isize - 1 } else { ii };
            mesh.idx(ii as usize, j)
        };
        let nb_y = |dj: isize| -> usize {
            let jj = j as isize + dj;
            let jj = if jj < 0 { 1 } else if jj > ny as isize { ny as isize - 1 } else { jj };
            mesh.idx(i, jj as usize)
        };
        let mut contrib: Vec<(usize, f64)> = Vec::with_capacity(8);
        contrib.push((nb_x(-1), cx));
        contrib.push((nb_x(1), cx));
        contrib.push((nb_y(-1), cy));
        contrib.push((nb_y(1), cy));
        if let Some(v) = &problem.velocity {
            // -q . grad u, upwinded: inflow neighbor gets +|q|/h
            let qx = v.qx[k];
            if qx > 0.0 {
                contrib.push((nb_x(-1), qx / hx));
            } else if qx < 0.0 {
                contrib.push((nb_x(1), -qx / hx));
            }
            let qy = v.qy[k];
            if qy > 0.0 {
                contrib.push((nb_y(-1), qy / hy));
            } else if qy < 0.0 {
                contrib.push((nb_y(1), -qy / hy));
            }
        }
        contrib.sort_by_key(|&(c, _)| c);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(contrib.len() + 1);
        for (c, v) in contrib {
            match row.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => row.push((c, v)),
            }
        }
        let diag = -row.iter().map(|&(_, v)| v).sum::<f64>();
        row.push((k, diag));
        rows.push(row);
    }
    Ok(SparseOperator::from_rows(n, rows)?)
}

fn check_state(mesh: &StructuredMesh2D, state: &[f64]) -> Result<(), AssemblyError> {
    if state.len() != mesh.n_nodes() {
        return Err(AssemblyError::DimensionMismatch { got: state.len(), want: mesh.n_nodes() });
    }
    if !all_finite(state) {
        return Err(AssemblyError::NonFiniteState);
    }
    Ok(())
}

/// Pointwise reaction `f(x_k, u_k) - c0 * u_k`, zero on Dirichlet nodes.
pub fn apply_nemytskii(
    problem: &SpdeProblem,
    mesh: &StructuredMesh2D,
    state: &[f64],
) -> Result<Vec<f64>, AssemblyError> {
    check_state(mesh, state)?;
    let dirichlet = problem.dirichlet_values(mesh);
    let out: Vec<f64> = state
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            if dirichlet[k].is_some() {
                0.0
            } else {
                problem.reaction.eval(mesh.node_xy(k).into(), u) - problem.garding_shift * u
            }
        })
        .collect();
    if !all_finite(&out) {
        return Err(AssemblyError::NonFiniteReaction);
    }
    Ok(out)
}

/// Diagonal Jacobian of the lumped reaction: `f_u(x_k, u_k) - c0`, zero on
/// Dirichlet nodes.
pub fn assemble_jacobian(
    problem: &SpdeProblem,
    mesh: &StructuredMesh2D,
    state: &[f64],
) -> Result<DiagonalMatrix, AssemblyError> {
    check_state(mesh, state)?;
    let dirichlet = problem.dirichlet_values(mesh);
    let diag: Vec<f64> = state
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            if dirichlet[k].is_some() {
                0.0
            } else {
                problem.reaction.derivative(mesh.node_xy(k).into(), u) - problem.garding_shift
            }
        })
        .collect();
    if !all_finite(&diag) {
        return Err(AssemblyError::NonFiniteReaction);
    }
    Ok(DiagonalMatrix { diag })
}

/// Linearization remainder `F(query) - J(lin_state) * query`.
pub fn remainder(
    problem: &SpdeProblem,
    mesh: &StructuredMesh2D,
    lin_state: &[f64],
    query_state: &[f64],
) -> Result<Vec<f64>, AssemblyError> {
    let f = apply_nemytskii(problem, mesh, query_state)?;
    let j = assemble_jacobian(problem, mesh, lin_state)?;
    Ok(f.iter().zip(j.diag.iter().zip(query_state)).map(|(fv, (jv, qv))| fv - jv * qv).collect())
}
