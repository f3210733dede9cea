//! Problem data for the semilinear SPDE
//! `dX = [div(D grad X) - q . grad X + f(x, X)] dt + b(x, X) dW`.

use crate::mesh::{BoundaryTag, Side, StructuredMesh2D};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("diffusion tensor must be positive definite, got dxx={dxx}, dyy={dyy}, det={det}")]
    NotPositiveDefinite { dxx: f64, dyy: f64, det: f64 },
    #[error("velocity field has {got} entries, mesh has {want} nodes")]
    VelocitySize { got: usize, want: usize },
    #[error("failed to read velocity file {path}: {source}")]
    VelocityRead { path: String, source: std::io::Error },
    #[error("failed to write velocity file {path}: {source}")]
    VelocityWrite { path: String, source: std::io::Error },
    #[error("velocity file {path}, line {line}: expected two reals, got {content:?}")]
    VelocityParse { path: String, line: usize, content: String },
}

/// Constant 2x2 diffusion tensor. Assembly supports the diagonal case, which
/// covers both experiment families.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionTensor {
    pub dxx: f64,
    pub dxy: f64,
    pub dyx: f64,
    pub dyy: f64,
}

impl DiffusionTensor {
    pub fn isotropic(d: f64) -> Self {
        Self::diagonal(d, d)
    }

    pub fn diagonal(dxx: f64, dyy: f64) -> Self {
        Self { dxx, dxy: 0.0, dyx: 0.0, dyy }
    }

    pub fn is_diagonal(&self) -> bool {
        self.dxy == 0.0 && self.dyx == 0.0
    }

    pub fn check_positive_definite(&self) -> Result<(), ProblemError> {
        let det = self.dxx * self.dyy - self.dxy * self.dyx;
        if self.dxx > 0.0 && self.dyy > 0.0 && det > 0.0 {
            Ok(())
        } else {
            Err(ProblemError::NotPositiveDefinite { dxx: self.dxx, dyy: self.dyy, det })
        }
    }
}

/// Reaction term `f(x, u)` of the drift, with its `u`-derivative.
#[derive(Debug, Clone, Copy)]
pub enum Reaction {
    /// `f = 0`
    None,
    /// `f(u) = coeff * u`
    Linear { coeff: f64 },
    /// `f(u) = coeff * u / (1 + u)`
    MichaelisMenten { coeff: f64 },
}

impl Reaction {
    pub fn eval(&self, _x: [f64; 2], u: f64) -> f64 {
        match *self {
            Reaction::None => 0.0,
            Reaction::Linear { coeff } => coeff * u,
            Reaction::MichaelisMenten { coeff } => coeff * u / (1.0 + u),
        }
    }

    pub fn derivative(&self, _x: [f64; 2], u: f64) -> f64 {
        match *self {
            Reaction::None => 0.0,
            Reaction::Linear { coeff } => coeff,
            Reaction::MichaelisMenten { coeff } => coeff / ((1.0 + u) * (1.0 + u)),
        }
    }
}

/// Multiplicative coefficient `b(x, u)` of the noise.
#[derive(Debug, Clone, Copy)]
pub enum NoiseCoeff {
    /// `b = value` (additive noise)
    Constant { value: f64 },
    /// `b = factor * u` (multiplicative noise)
    StateProportional { factor: f64 },
}

impl NoiseCoeff {
    pub fn eval(&self, _x: [f64; 2], u: f64) -> f64 {
        match *self {
            NoiseCoeff::Constant { value } => value,
            NoiseCoeff::StateProportional { factor } => factor * u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCondition {
    NeumannHomogeneous,
    Dirichlet(f64),
}

/// Per-side boundary conditions.
#[derive(Debug, Clone, Copy)]
pub struct BoundarySpec {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
    pub bottom: BoundaryCondition,
    pub top: BoundaryCondition,
}

impl BoundarySpec {
    pub fn all_neumann() -> Self {
        Self {
            left: BoundaryCondition::NeumannHomogeneous,
            right: BoundaryCondition::NeumannHomogeneous,
            bottom: BoundaryCondition::NeumannHomogeneous,
            top: BoundaryCondition::NeumannHomogeneous,
        }
    }

    pub fn side(&self, s: Side) -> BoundaryCondition {
        match s {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }

    /// Dirichlet value pinned at a node, if any of its sides is Dirichlet.
    /// At corners with two Dirichlet sides the value of the first side in
    /// (left, right, bottom, top) order wins.
    pub fn dirichlet_value(&self, tag: BoundaryTag) -> Option<f64> {
        let mut sides: Vec<Side> = tag.sides().collect();
        sides.sort_by_key(|s| Side::ALL.iter().position(|t| t == s));
        sides.into_iter().find_map(|s| match self.side(s) {
            BoundaryCondition::Dirichlet(v) => Some(v),
            BoundaryCondition::NeumannHomogeneous => None,
        })
    }
}

/// Initial condition.
#[derive(Debug, Clone, Copy)]
pub enum InitialValue {
    Zero,
    Constant(f64),
    /// A single product-cosine eigenfunction, scaled by `amp`.
    Mode { i: usize, j: usize, amp: f64 },
}

impl InitialValue {
    pub fn nodal(&self, mesh: &StructuredMesh2D) -> Vec<f64> {
        match *self {
            InitialValue::Zero => vec![0.0; mesh.n_nodes()],
            InitialValue::Constant(v) => vec![v; mesh.n_nodes()],
            InitialValue::Mode { i, j, amp } => {
                let (lx, ly) = (mesh.lx(), mesh.ly());
                let fx = if i == 0 { (1.0 / lx).sqrt() } else { (2.0 / lx).sqrt() };
                let fy = if j == 0 { (1.0 / ly).sqrt() } else { (2.0 / ly).sqrt() };
                (0..mesh.n_nodes())
                    .map(|k| {
                        let [x, y] = mesh.node_xy(k);
                        amp * fx
                            * (i as f64 * std::f64::consts::PI * x / lx).cos()
                            * fy
                            * (j as f64 * std::f64::consts::PI * y / ly).cos()
                    })
                    .collect()
            }
        }
    }
}

/// Darcy velocity sampled at mesh nodes in DOF order.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub qx: Vec<f64>,
    pub qy: Vec<f64>,
}

impl VelocityField {
    pub fn len(&self) -> usize {
        self.qx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qx.is_empty()
    }

    /// Read from plain text: one line per node, `qx qy` whitespace-separated.
    pub fn read_file(path: &Path) -> Result<Self, ProblemError> {
        let text = fs::read_to_string(path).map_err(|source| ProblemError::VelocityRead {
            path: path.display().to_string(),
            source,
        })?;
        let mut qx = Vec::new();
        let mut qy = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let parse = |s: Option<&str>| s.and_then(|t| t.parse::<f64>().ok());
            match (parse(parts.next()), parse(parts.next()), parts.next()) {
                (Some(a), Some(b), None) => {
                    qx.push(a);
                    qy.push(b);
                }
                _ => {
                    return Err(ProblemError::VelocityParse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        content: line.to_string(),
                    })
                }
            }
        }
        Ok(Self { qx, qy })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), ProblemError> {
        let mut out = String::with_capacity(self.len() * 32);
        for (a, b) in self.qx.iter().zip(&self.qy) {
            out.push_str(&format!("{a:.16e} {b:.16e}\n"));
        }
        let mut f = fs::File::create(path).map_err(|source| ProblemError::VelocityWrite {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(out.as_bytes()).map_err(|source| ProblemError::VelocityWrite {
            path: path.display().to_string(),
            source,
        })
    }

    /// Divergence-free synthetic field: uniform drift `(q0, 0)` plus the curl
    /// of the stream function `amp/pi * sin(pi x/lx) sin(pi y/ly)`.
    pub fn synthetic(mesh: &StructuredMesh2D, q0: f64, amp: f64) -> Self {
        use std::f64::consts::PI;
        let (lx, ly) = (mesh.lx(), mesh.ly());
        let mut qx = Vec::with_capacity(mesh.n_nodes());
        let mut qy = Vec::with_capacity(mesh.n_nodes());
        for k in 0..mesh.n_nodes() {
            let [x, y] = mesh.node_xy(k);
            qx.push(q0 + amp * (PI * x / lx).sin() * (PI * y / ly).cos());
            qy.push(-amp * (PI * x / lx).cos() * (PI * y / ly).sin() * (lx / ly));
        }
        Self { qx, qy }
    }
}

/// Full problem description on a rectangle.
#[derive(Debug, Clone)]
pub struct SpdeProblem {
    pub diffusion: DiffusionTensor,
    pub velocity: Option<VelocityField>,
    pub reaction: Reaction,
    pub noise_coeff: NoiseCoeff,
    pub boundary: BoundarySpec,
    pub initial: InitialValue,
    /// Extra linear damping folded into the reaction term: the effective
    /// reaction is `f(x, u) - garding_shift * u`. Defaults to 0; both built-in
    /// experiments run with the shift off.
    pub garding_shift: f64,
}

impl SpdeProblem {
    /// Stiff linear reaction with additive noise on the unit square,
    /// homogeneous Neumann everywhere: `dX = [0.1 Lap X - 100 X]dt + dW`.
    pub fn example1() -> Self {
        Self {
            diffusion: DiffusionTensor::isotropic(0.1),
            velocity: None,
            reaction: Reaction::Linear { coeff: -100.0 },
            noise_coeff: NoiseCoeff::Constant { value: 1.0 },
            boundary: BoundarySpec::all_neumann(),
            initial: InitialValue::Zero,
            garding_shift: 0.0,
        }
    }

    /// Advection-diffusion with saturating reaction and multiplicative noise:
    /// `dX = [div(D grad X) - q.grad X - 10X/(X+1)]dt + X dW`, Dirichlet
    /// `X = 1` on the left side, homogeneous Neumann elsewhere.
    pub fn example2(velocity: VelocityField) -> Self {
        Self {
            diffusion: DiffusionTensor::diagonal(1e-2, 1e-3),
            velocity: Some(velocity),
            reaction: Reaction::MichaelisMenten { coeff: -10.0 },
            noise_coeff: NoiseCoeff::StateProportional { factor: 1.0 },
            boundary: BoundarySpec {
                left: BoundaryCondition::Dirichlet(1.0),
                right: BoundaryCondition::NeumannHomogeneous,
                bottom: BoundaryCondition::NeumannHomogeneous,
                top: BoundaryCondition::NeumannHomogeneous,
            },
            initial: InitialValue::Constant(1.0),
            garding_shift: 0.0,
        }
    }

    /// Dirichlet value per node (`None` on free DOFs).
    pub fn dirichlet_values(&self, mesh: &StructuredMesh2D) -> Vec<Option<f64>> {
        mesh.boundary_tags().iter().map(|&t| self.boundary.dirichlet_value(t)).collect()
    }

    pub fn has_dirichlet(&self) -> bool {
        Side::ALL
            .iter()
            .any(|&s| matches!(self.boundary.side(s), BoundaryCondition::Dirichlet(_)))
    }
}
