//! Monte Carlo strong-convergence studies: per-step-size root-mean-square
//! errors against a coupled reference, order regression, and report artifacts
//! (`errors.csv`, `report.json`, `loglog.svg`).
//!
//! Every sample draws one Brownian path on the finest dyadic grid; all
//! schemes, all step sizes, and the reference consume coarse sums of the same
//! increments. Samples are the unit of parallelism and results are reduced in
//! sample order, so runs are bit-identical across thread counts.

use crate::assembly::{assemble_lumped_mass, assemble_operator, LumpedMass};
use crate::exact::{evolve_exact, exact_nodal_solution, OuModeSystem, OuState};
use crate::integrators::{integrate, SchemeContext, SchemeId};
use crate::krylov::KrylovConfig;
use crate::mesh::StructuredMesh2D;
use crate::noise::{sample_path, SpectralNoiseModel};
use crate::plot::{loglog_svg, Series};
use crate::problem::{
    BoundaryCondition, BoundarySpec, DiffusionTensor, InitialValue, NoiseCoeff, Reaction,
    SpdeProblem, VelocityField,
};
use crate::rng::{derive_seed, sample_rng, StreamTag};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Points with a finite error at most this factor above the smallest-dt error
/// (and no failed samples) count as the stable range of a scheme.
pub const INSTABILITY_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown configuration key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} has invalid value {value:?}: {reason}")]
    BadValue { line: usize, key: String, value: String, reason: String },
    #[error("line {line}: expected `key = value`, got {content:?}")]
    Malformed { line: usize, content: String },
    #[error("missing required key {0:?}")]
    MissingKey(&'static str),
    #[error("unknown problem id {0:?}; expected example1, example2 or custom")]
    UnknownProblem(String),
    #[error("unknown preset {0:?}; available: {1}")]
    UnknownPreset(String, String),
    #[error("invalid study configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o failure at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Problem(#[from] crate::problem::ProblemError),
    #[error(transparent)]
    Assembly(#[from] crate::assembly::AssemblyError),
    #[error(transparent)]
    Noise(#[from] crate::noise::NoiseError),
    #[error(transparent)]
    Exact(#[from] crate::exact::ExactError),
    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),
    #[error("sample {sample} failed irrecoverably: {message}")]
    Sample { sample: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProblemId {
    Example1,
    Example2,
    Custom,
}

impl ProblemId {
    fn name(&self) -> &'static str {
        match self {
            ProblemId::Example1 => "example1",
            ProblemId::Example2 => "example2",
            ProblemId::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ReferenceMode {
    /// Exact per-mode dynamics (additive linear family only).
    Exact,
    /// Same-path integration at a finer step.
    Fine { dt: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum VelocitySpec {
    None,
    File(PathBuf),
    Synthetic { q0: f64, amp: f64 },
}

/// Full description of one convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub problem: ProblemId,
    pub schemes: Vec<String>,
    pub dt_ladder: Vec<f64>,
    pub t_final: f64,
    pub samples: usize,
    pub seed: u64,
    pub noise_r: f64,
    /// Modes per axis; 0 selects `min(nx, ny)/2`.
    pub noise_modes: usize,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub reference: ReferenceMode,
    /// Fine steps of the Brownian path; 0 selects an automatic refinement.
    pub fine_steps: usize,
    pub krylov_m: usize,
    pub krylov_tol: f64,
    pub out_dir: PathBuf,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub diffusion_xx: f64,
    pub diffusion_yy: f64,
    #[serde(skip)]
    pub reaction: Reaction,
    #[serde(skip)]
    pub noise_b: NoiseCoeff,
    #[serde(skip)]
    pub bc: BoundarySpec,
    #[serde(skip)]
    pub initial: InitialValue,
    pub velocity: VelocitySpec,
    pub garding_shift: f64,
}

fn base_config(problem: ProblemId) -> StudyConfig {
    let (template, velocity) = match problem {
        ProblemId::Example1 | ProblemId::Custom => (SpdeProblem::example1(), VelocitySpec::None),
        ProblemId::Example2 => (
            SpdeProblem::example2(VelocityField { qx: vec![], qy: vec![] }),
            VelocitySpec::Synthetic { q0: 1.0, amp: 0.5 },
        ),
    };
    StudyConfig {
        problem,
        schemes: vec!["sers".into(), "setd1".into()],
        dt_ladder: vec![],
        t_final: 1.0,
        samples: 50,
        seed: 42,
        noise_r: 0.7,
        noise_modes: 0,
        nx: 50,
        ny: 50,
        lx: 1.0,
        ly: 1.0,
        reference: ReferenceMode::Exact,
        fine_steps: 0,
        krylov_m: 10,
        krylov_tol: 1e-6,
        out_dir: PathBuf::from("out"),
        threads: 0,
        diffusion_xx: template.diffusion.dxx,
        diffusion_yy: template.diffusion.dyy,
        reaction: template.reaction,
        noise_b: template.noise_coeff,
        bc: template.boundary,
        initial: template.initial,
        velocity,
        garding_shift: 0.0,
    }
}

/// Names of the built-in presets.
pub const PRESET_NAMES: [&str; 5] =
    ["example1", "example2", "example1_full", "example2_full", "micro"];

/// Built-in study presets. `example1`/`example2` are desk-scale; the `_full`
/// variants match the production grids and are long-running. `micro` finishes
/// in seconds and exists for smoke tests.
pub fn preset(name: &str) -> Result<StudyConfig, ConfigError> {
    let ladder = |ks: std::ops::RangeInclusive<u32>| -> Vec<f64> {
        ks.map(|k| 0.5f64.powi(k as i32)).collect()
    };
    let mut cfg = match name {
        "example1" => {
            let mut c = base_config(ProblemId::Example1);
            c.dt_ladder = ladder(4..=8); // 1/16 .. 1/256
            c
        }
        "example1_full" => {
            let mut c = base_config(ProblemId::Example1);
            c.nx = 100;
            c.ny = 100;
            c.dt_ladder = ladder(2..=8); // 1/4 .. 1/256
            c
        }
        "example2" => {
            let mut c = base_config(ProblemId::Example2);
            c.noise_r = 0.6;
            c.samples = 25;
            c.dt_ladder = ladder(5..=8); // 1/32 .. 1/256
            c.reference = ReferenceMode::Fine { dt: 1.0 / 1024.0 };
            c
        }
        "example2_full" => {
            let mut c = base_config(ProblemId::Example2);
            c.noise_r = 0.6;
            c.nx = 110;
            c.ny = 110;
            c.dt_ladder = ladder(5..=8);
            c.reference = ReferenceMode::Fine { dt: 1.0 / 2048.0 };
            c
        }
        "micro" => {
            let mut c = base_config(ProblemId::Example1);
            c.nx = 8;
            c.ny = 8;
            c.samples = 4;
            c.t_final = 0.5;
            c.dt_ladder = ladder(2..=4); // 1/4 .. 1/16
            c
        }
        other => {
            return Err(ConfigError::UnknownPreset(other.to_string(), PRESET_NAMES.join(", ")))
        }
    };
    cfg.out_dir = PathBuf::from("out").join(name);
    Ok(cfg)
}

fn parse_dt(s: &str) -> Result<f64, String> {
    let t = s.trim();
    if let Some((num, den)) = t.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|_| format!("bad numerator in {t:?}"))?;
        let d: f64 = den.trim().parse().map_err(|_| format!("bad denominator in {t:?}"))?;
        if d == 0.0 {
            return Err("zero denominator".into());
        }
        Ok(n / d)
    } else {
        t.parse().map_err(|_| format!("not a number: {t:?}"))
    }
}

fn fmt_dt(dt: f64) -> String {
    let inv = 1.0 / dt;
    if inv.fract() == 0.0 && inv.is_finite() && inv.abs() < 1e15 {
        format!("1/{}", inv as i64)
    } else {
        format!("{dt}")
    }
}

impl StudyConfig {
    /// Parse the flat `key = value` format. Lines starting with `#` and blank
    /// lines are skipped. A `problem` key must come first and selects the
    /// defaults the remaining keys override.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed { line: idx + 1, content: line.into() })?;
            entries.push((idx + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let problem = entries
            .iter()
            .find(|(_, k, _)| k == "problem")
            .map(|(line, _, v)| match v.as_str() {
                "example1" => Ok(ProblemId::Example1),
                "example2" => Ok(ProblemId::Example2),
                "custom" => Ok(ProblemId::Custom),
                other => Err(ConfigError::UnknownProblem(other.to_string())).map_err(|e| {
                    let _ = line;
                    e
                }),
            })
            .ok_or(ConfigError::MissingKey("problem"))??;
        let mut cfg = base_config(problem);
        if problem == ProblemId::Example2 {
            // match example2 preset defaults when parsing bare `problem = example2`
            cfg.noise_r = 0.6;
            cfg.samples = 25;
            cfg.reference = ReferenceMode::Fine { dt: 1.0 / 1024.0 };
            cfg.dt_ladder = (5..=8).map(|k| 0.5f64.powi(k)).collect();
        } else {
            cfg.dt_ladder = (4..=8).map(|k| 0.5f64.powi(k)).collect();
        }
        for (line, key, value) in entries {
            cfg.apply(line, &key, &value)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        macro_rules! num {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|e| bad(e.to_string()))?
            };
        }
        match key {
            "problem" => {} // handled in parse()
            "schemes" => {
                let mut v = Vec::new();
                for part in value.split(',') {
                    part.trim().parse::<SchemeId>().map_err(bad)?;
                    v.push(part.trim().to_string());
                }
                if v.is_empty() {
                    return Err(bad("at least one scheme required".into()));
                }
                self.schemes = v;
            }
            "dt_ladder" => {
                let mut v = Vec::new();
                for part in value.split(',') {
                    v.push(parse_dt(part).map_err(bad)?);
                }
                self.dt_ladder = v;
            }
            "t_final" => self.t_final = num!(f64),
            "samples" => self.samples = num!(usize),
            "seed" => self.seed = num!(u64),
            "noise_r" => self.noise_r = num!(f64),
            "noise_modes" => self.noise_modes = num!(usize),
            "nx" => self.nx = num!(usize),
            "ny" => self.ny = num!(usize),
            "lx" => self.lx = num!(f64),
            "ly" => self.ly = num!(f64),
            "reference" => {
                self.reference = if value == "exact" {
                    ReferenceMode::Exact
                } else if let Some(rest) = value.strip_prefix("fine:") {
                    ReferenceMode::Fine { dt: parse_dt(rest).map_err(bad)? }
                } else {
                    return Err(bad("expected `exact` or `fine:<dt>`".into()));
                };
            }
            "fine_steps" => self.fine_steps = num!(usize),
            "krylov_m" => self.krylov_m = num!(usize),
            "krylov_tol" => self.krylov_tol = num!(f64),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "threads" => self.threads = num!(usize),
            "diffusion_xx" => self.diffusion_xx = num!(f64),
            "diffusion_yy" => self.diffusion_yy = num!(f64),
            "reaction" => {
                self.reaction = if value == "none" {
                    Reaction::None
                } else if let Some(c) = value.strip_prefix("linear:") {
                    Reaction::Linear { coeff: c.parse().map_err(|_| bad("bad coefficient".into()))? }
                } else if let Some(c) = value.strip_prefix("mm:") {
                    Reaction::MichaelisMenten {
                        coeff: c.parse().map_err(|_| bad("bad coefficient".into()))?,
                    }
                } else {
                    return Err(bad("expected `none`, `linear:<coeff>` or `mm:<coeff>`".into()));
                };
            }
            "noise_b" => {
                self.noise_b = if let Some(c) = value.strip_prefix("constant:") {
                    NoiseCoeff::Constant { value: c.parse().map_err(|_| bad("bad value".into()))? }
                } else if value == "proportional" {
                    NoiseCoeff::StateProportional { factor: 1.0 }
                } else if let Some(c) = value.strip_prefix("proportional:") {
                    NoiseCoeff::StateProportional {
                        factor: c.parse().map_err(|_| bad("bad factor".into()))?,
                    }
                } else {
                    return Err(bad("expected `constant:<v>` or `proportional[:<factor>]`".into()));
                };
            }
            "bc_left" | "bc_right" | "bc_bottom" | "bc_top" => {
                let cond = if value == "neumann" {
                    BoundaryCondition::NeumannHomogeneous
                } else if let Some(v) = value.strip_prefix("dirichlet:") {
                    BoundaryCondition::Dirichlet(v.parse().map_err(|_| bad("bad value".into()))?)
                } else {
                    return Err(bad("expected `neumann` or `dirichlet:<value>`".into()));
                };
                match key {
                    "bc_left" => self.bc.left = cond,
                    "bc_right" => self.bc.right = cond,
                    "bc_bottom" => self.bc.bottom = cond,
                    _ => self.bc.top = cond,
                }
            }
            "initial" => {
                self.initial = if value == "zero" {
                    InitialValue::Zero
                } else if let Some(v) = value.strip_prefix("constant:") {
                    InitialValue::Constant(v.parse().map_err(|_| bad("bad value".into()))?)
                } else if let Some(rest) = value.strip_prefix("mode:") {
                    let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(bad("expected `mode:<i>,<j>,<amp>`".into()));
                    }
                    InitialValue::Mode {
                        i: parts[0].parse().map_err(|_| bad("bad i".into()))?,
                        j: parts[1].parse().map_err(|_| bad("bad j".into()))?,
                        amp: parts[2].parse().map_err(|_| bad("bad amplitude".into()))?,
                    }
                } else {
                    return Err(bad("expected `zero`, `constant:<v>` or `mode:<i>,<j>,<amp>`".into()));
                };
            }
            "velocity" => {
                self.velocity = if value == "none" {
                    VelocitySpec::None
                } else if let Some(p) = value.strip_prefix("file:") {
                    VelocitySpec::File(PathBuf::from(p))
                } else if let Some(rest) = value.strip_prefix("synthetic:") {
                    let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(bad("expected `synthetic:<q0>,<amp>`".into()));
                    }
                    VelocitySpec::Synthetic {
                        q0: parts[0].parse().map_err(|_| bad("bad q0".into()))?,
                        amp: parts[1].parse().map_err(|_| bad("bad amplitude".into()))?,
                    }
                } else {
                    return Err(bad("expected `none`, `file:<path>` or `synthetic:<q0>,<amp>`".into()));
                };
            }
            "garding_shift" => self.garding_shift = num!(f64),
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
        Ok(())
    }

    /// Canonical text form; `parse` of the output reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "problem = {}", self.problem.name());
        let _ = writeln!(s, "schemes = {}", self.schemes.join(","));
        let ladder: Vec<String> = self.dt_ladder.iter().map(|&d| fmt_dt(d)).collect();
        let _ = writeln!(s, "dt_ladder = {}", ladder.join(","));
        let _ = writeln!(s, "t_final = {}", self.t_final);
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "noise_r = {}", self.noise_r);
        let _ = writeln!(s, "noise_modes = {}", self.noise_modes);
        let _ = writeln!(s, "nx = {}", self.nx);
        let _ = writeln!(s, "ny = {}", self.ny);
        let _ = writeln!(s, "lx = {}", self.lx);
        let _ = writeln!(s, "ly = {}", self.ly);
        let _ = match self.reference {
            ReferenceMode::Exact => writeln!(s, "reference = exact"),
            ReferenceMode::Fine { dt } => writeln!(s, "reference = fine:{}", fmt_dt(dt)),
        };
        let _ = writeln!(s, "fine_steps = {}", self.fine_steps);
        let _ = writeln!(s, "krylov_m = {}", self.krylov_m);
        let _ = writeln!(s, "krylov_tol = {}", self.krylov_tol);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "diffusion_xx = {}", self.diffusion_xx);
        let _ = writeln!(s, "diffusion_yy = {}", self.diffusion_yy);
        let _ = match self.reaction {
            Reaction::None => writeln!(s, "reaction = none"),
            Reaction::Linear { coeff } => writeln!(s, "reaction = linear:{coeff}"),
            Reaction::MichaelisMenten { coeff } => writeln!(s, "reaction = mm:{coeff}"),
        };
        let _ = match self.noise_b {
            NoiseCoeff::Constant { value } => writeln!(s, "noise_b = constant:{value}"),
            NoiseCoeff::StateProportional { factor } => {
                writeln!(s, "noise_b = proportional:{factor}")
            }
        };
        for (name, cond) in [
            ("bc_left", self.bc.left),
            ("bc_right", self.bc.right),
            ("bc_bottom", self.bc.bottom),
            ("bc_top", self.bc.top),
        ] {
            let _ = match cond {
                BoundaryCondition::NeumannHomogeneous => writeln!(s, "{name} = neumann"),
                BoundaryCondition::Dirichlet(v) => writeln!(s, "{name} = dirichlet:{v}"),
            };
        }
        let _ = match self.initial {
            InitialValue::Zero => writeln!(s, "initial = zero"),
            InitialValue::Constant(v) => writeln!(s, "initial = constant:{v}"),
            InitialValue::Mode { i, j, amp } => writeln!(s, "initial = mode:{i},{j},{amp}"),
        };
        let _ = match &self.velocity {
            VelocitySpec::None => writeln!(s, "velocity = none"),
            VelocitySpec::File(p) => writeln!(s, "velocity = file:{}", p.display()),
            VelocitySpec::Synthetic { q0, amp } => {
                writeln!(s, "velocity = synthetic:{q0},{amp}")
            }
        };
        let _ = writeln!(s, "garding_shift = {}", self.garding_shift);
        s
    }

    pub fn parsed_schemes(&self) -> Vec<SchemeId> {
        self.schemes.iter().map(|s| s.parse().expect("validated")).collect()
    }

    fn steps_for(&self, dt: f64) -> Result<usize, ConfigError> {
        let m = self.t_final / dt;
        let rounded = m.round();
        if (m - rounded).abs() > 1e-9 * m.max(1.0) || rounded < 1.0 {
            return Err(ConfigError::Invalid(format!(
                "dt {} does not divide the final time {}",
                fmt_dt(dt),
                self.t_final
            )));
        }
        Ok(rounded as usize)
    }

    /// Fine step count of the Brownian path, resolving the automatic choice.
    pub fn resolved_fine_steps(&self) -> Result<usize, ConfigError> {
        if self.fine_steps != 0 {
            return Ok(self.fine_steps);
        }
        let min_dt = self.dt_ladder.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(match self.reference {
            // eight extra dyadic levels keep the conditional-sampling floor
            // far below the coarsest resolvable error
            ReferenceMode::Exact => 8 * self.steps_for(min_dt)?,
            ReferenceMode::Fine { dt } => self.steps_for(dt)?,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        if self.samples == 0 {
            return inv("samples must be positive".into());
        }
        if self.nx < 2 || self.ny < 2 {
            return inv(format!("grid must be at least 2x2 cells, got {}x{}", self.nx, self.ny));
        }
        if !(self.t_final > 0.0) {
            return inv(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.dt_ladder.is_empty() {
            return inv("dt_ladder must not be empty".into());
        }
        if !(self.noise_r > 0.5) {
            return inv(format!("noise_r must exceed 0.5, got {}", self.noise_r));
        }
        let max_modes = self.nx.min(self.ny);
        if self.noise_modes > max_modes {
            return inv(format!(
                "noise_modes {} exceeds the {} modes representable per axis",
                self.noise_modes, max_modes
            ));
        }
        if self.krylov_m == 0 || !(self.krylov_tol > 0.0) {
            return inv("krylov_m must be >= 1 and krylov_tol positive".into());
        }
        for s in &self.schemes {
            s.parse::<SchemeId>().map_err(ConfigError::Invalid)?;
        }
        let mut sorted = self.dt_ladder.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return inv("dt_ladder has duplicate entries".into());
        }
        let m_min = self.steps_for(*sorted.last().unwrap())? as u64; // fewest steps
        for &dt in &sorted {
            let m = self.steps_for(dt)? as u64;
            if m % m_min != 0 || !(m / m_min).is_power_of_two() {
                return inv(format!(
                    "dt ladder is not dyadically nested: {} vs {}",
                    fmt_dt(dt),
                    fmt_dt(*sorted.last().unwrap())
                ));
            }
        }
        if let ReferenceMode::Fine { dt } = self.reference {
            let min_dt = sorted[0];
            if !(dt < min_dt) {
                return inv(format!(
                    "reference dt {} must be strictly smaller than the smallest ladder entry {}",
                    fmt_dt(dt),
                    fmt_dt(min_dt)
                ));
            }
            self.steps_for(dt)?;
        }
        let n_fine = self.resolved_fine_steps()?;
        let mut required: Vec<usize> =
            self.dt_ladder.iter().map(|&d| self.steps_for(d)).collect::<Result<_, _>>()?;
        if let ReferenceMode::Fine { dt } = self.reference {
            required.push(self.steps_for(dt)?);
        }
        for m in required {
            if n_fine % m != 0 || !(n_fine / m).is_power_of_two() {
                return inv(format!(
                    "fine_steps {n_fine} is not a dyadic refinement of the {m}-step level"
                ));
            }
        }
        Ok(())
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Least-squares slope of `log(rms)` against `log(dt)`.
pub fn fit_order(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    Some((slope, ym - slope * xm))
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRow {
    pub scheme: String,
    pub dt: f64,
    /// Root-mean-square error over successful samples; absent when every
    /// sample failed.
    pub rms_error: Option<f64>,
    /// Successful samples entering the mean.
    pub n_samples: usize,
    /// Samples aborted on non-finite states or matrix-function breakdown.
    pub n_failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderFit {
    pub scheme: String,
    /// Regression slope over the stable points; absent with fewer than two.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Step sizes that entered the regression: zero failures and error within
    /// [`INSTABILITY_FACTOR`] of the smallest-dt error, walking up from the
    /// smallest step.
    pub stable_dts: Vec<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub version: String,
    pub config_hash: String,
    pub config_text: String,
    pub rows: Vec<ErrorRow>,
    pub fits: Vec<OrderFit>,
    /// XOR of per-sample Brownian path checksums (coupling audit trail).
    pub path_checksum_xor: u64,
}

impl ConvergenceReport {
    pub fn fit_for(&self, scheme: SchemeId) -> Option<&OrderFit> {
        self.fits.iter().find(|f| f.scheme == scheme.name())
    }

    pub fn row(&self, scheme: SchemeId, dt: f64) -> Option<&ErrorRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme.name() && (r.dt - dt).abs() < 1e-12 * dt)
    }
}

/// Stable prefix of the dt-ascending rows of one scheme.
fn stable_points(rows: &[&ErrorRow]) -> Vec<(f64, f64)> {
    let mut asc: Vec<&&ErrorRow> = rows.iter().collect();
    asc.sort_by(|a, b| a.dt.partial_cmp(&b.dt).unwrap());
    let base = match asc.first().and_then(|r| if r.n_failures == 0 { r.rms_error } else { None }) {
        Some(v) if v.is_finite() => v,
        _ => return Vec::new(),
    };
    let mut out = Vec::new();
    for r in asc {
        match r.rms_error {
            Some(e) if r.n_failures == 0 && e.is_finite() && e <= INSTABILITY_FACTOR * base => {
                out.push((r.dt, e))
            }
            _ => break,
        }
    }
    out
}

enum RefPlan {
    Exact(OuModeSystem),
    FineLevel(u32),
}

struct StudySetup {
    mesh: StructuredMesh2D,
    problem: SpdeProblem,
    a_h: crate::sparse::SparseOperator,
    model: SpectralNoiseModel,
    mass: LumpedMass,
    krylov: KrylovConfig,
    n_fine: usize,
    reference: RefPlan,
    schemes: Vec<SchemeId>,
    t_final: f64,
    seed: u64,
}

enum SampleFailure {
    Unstable(String),
}

struct SampleOutcome {
    checksum: u64,
    /// Squared lumped-L2 endpoint error per scheme.
    per_scheme: Vec<Result<f64, SampleFailure>>,
}

impl StudySetup {
    fn build(cfg: &StudyConfig) -> Result<Self, StudyError> {
        cfg.validate()?;
        let mesh = StructuredMesh2D::new(cfg.lx, cfg.ly, cfg.nx, cfg.ny)?;
        let velocity = match &cfg.velocity {
            VelocitySpec::None => None,
            VelocitySpec::Synthetic { q0, amp } => {
                Some(VelocityField::synthetic(&mesh, *q0, *amp))
            }
            VelocitySpec::File(path) => {
                let v = VelocityField::read_file(path)?;
                if v.len() != mesh.n_nodes() {
                    return Err(crate::problem::ProblemError::VelocitySize {
                        got: v.len(),
                        want: mesh.n_nodes(),
                    }
                    .into());
                }
                Some(v)
            }
        };
        let problem = SpdeProblem {
            diffusion: DiffusionTensor::diagonal(cfg.diffusion_xx, cfg.diffusion_yy),
            velocity,
            reaction: cfg.reaction,
            noise_coeff: cfg.noise_b,
            boundary: cfg.bc,
            initial: cfg.initial,
            garding_shift: cfg.garding_shift,
        };
        let a_h = assemble_operator(&problem, &mesh)?;
        let n_modes = if cfg.noise_modes == 0 {
            SpectralNoiseModel::default_modes(&mesh)
        } else {
            cfg.noise_modes
        };
        let model = SpectralNoiseModel::new(cfg.noise_r, n_modes, &mesh)?;
        let mass = assemble_lumped_mass(&mesh);
        let n_fine = cfg.resolved_fine_steps()?;
        let reference = match cfg.reference {
            ReferenceMode::Exact => RefPlan::Exact(OuModeSystem::from_problem(&problem, &model)?),
            ReferenceMode::Fine { dt } => {
                let m = cfg.steps_for(dt)?;
                RefPlan::FineLevel((n_fine / m).trailing_zeros())
            }
        };
        Ok(Self {
            mesh,
            problem,
            a_h,
            model,
            mass,
            krylov: KrylovConfig {
                m_max: cfg.krylov_m,
                tol: cfg.krylov_tol,
                ..KrylovConfig::default()
            },
            n_fine,
            reference,
            schemes: cfg.parsed_schemes(),
            t_final: cfg.t_final,
            seed: cfg.seed,
        })
    }

    fn level_for_steps(&self, steps: usize) -> u32 {
        (self.n_fine / steps).trailing_zeros()
    }

    /// Squared endpoint errors for one sample at one ladder level. The path
    /// and the reference endpoint are rebuilt deterministically from the
    /// sample index, so calls at different levels stay coupled.
    fn sample_outcome(&self, sample: usize, level: u32) -> Result<SampleOutcome, String> {
        let path_seed = derive_seed(self.seed, sample as u64, StreamTag::Path);
        let path = sample_path(&self.model, path_seed, self.t_final, self.n_fine)
            .map_err(|e| e.to_string())?;
        let checksum = path.checksum();
        let ctx = SchemeContext::new(&self.problem, &self.mesh, &self.a_h, self.krylov.clone());
        let reference: Result<Vec<f64>, SampleFailure> = match &self.reference {
            RefPlan::Exact(system) => {
                let mut rng = sample_rng(self.seed, sample as u64, StreamTag::OuCoupling);
                let st0 = OuState::from_initial(&self.problem.initial, system, &self.model)
                    .map_err(|e| e.to_string())?;
                match evolve_exact(system, st0, &path, &mut rng) {
                    Ok(st) => Ok(exact_nodal_solution(&st, &self.model)),
                    Err(e) => return Err(e.to_string()),
                }
            }
            RefPlan::FineLevel(ref_level) => {
                match integrate(&ctx, &self.model, &path, SchemeId::Sers, *ref_level) {
                    Ok(x) => Ok(x),
                    Err(e) if e.is_instability() => {
                        Err(SampleFailure::Unstable(format!("reference: {e}")))
                    }
                    Err(e) => return Err(e.to_string()),
                }
            }
        };
        let mut per_scheme = Vec::with_capacity(self.schemes.len());
        for &scheme in &self.schemes {
            let outcome = match &reference {
                Err(SampleFailure::Unstable(msg)) => {
                    Err(SampleFailure::Unstable(msg.clone()))
                }
                Ok(ref_field) => match integrate(&ctx, &self.model, &path, scheme, level) {
                    Ok(x) => {
                        let diff: Vec<f64> =
                            x.iter().zip(ref_field).map(|(a, b)| a - b).collect();
                        Ok(self.mass.norm2(&diff))
                    }
                    Err(e) if e.is_instability() => Err(SampleFailure::Unstable(e.to_string())),
                    Err(e) => return Err(e.to_string()),
                },
            };
            per_scheme.push(outcome);
        }
        Ok(SampleOutcome { checksum, per_scheme })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StudyError + '_ {
    move |source| StudyError::Io { path: path.to_path_buf(), source }
}

/// Run a full study and write `errors.csv`, `report.json` and `loglog.svg`
/// into the configured output directory. The CSV is flushed after every
/// completed step-size level, so partial results survive late failures.
pub fn run_study(cfg: &StudyConfig) -> Result<ConvergenceReport, StudyError> {
    let setup = StudySetup::build(cfg)?;
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let csv_path = cfg.out_dir.join("errors.csv");
    let mut csv = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    writeln!(csv, "scheme,dt,rms_error,n_samples,n_failures").map_err(io_err(&csv_path))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| StudyError::ThreadPool(e.to_string()))?;

    let mut ladder = cfg.dt_ladder.clone();
    ladder.sort_by(|a, b| b.partial_cmp(a).unwrap()); // descending

    let mut rows: Vec<ErrorRow> = Vec::new();
    let mut sample_checksums: Vec<Option<u64>> = vec![None; cfg.samples];
    for &dt in &ladder {
        let steps = cfg.steps_for(dt)?;
        let level = setup.level_for_steps(steps);
        let outcomes: Result<Vec<SampleOutcome>, (usize, String)> = pool.install(|| {
            (0..cfg.samples)
                .into_par_iter()
                .map(|s| setup.sample_outcome(s, level).map_err(|m| (s, m)))
                .collect()
        });
        let outcomes =
            outcomes.map_err(|(sample, message)| StudyError::Sample { sample, message })?;
        // ordered reduction; also audit that every level saw the same paths
        for (s, o) in outcomes.iter().enumerate() {
            match sample_checksums[s] {
                None => sample_checksums[s] = Some(o.checksum),
                Some(c) => assert_eq!(
                    c, o.checksum,
                    "path checksum changed between levels for sample {s}"
                ),
            }
            log::debug!("dt={} sample={} path checksum {:016x}", fmt_dt(dt), s, o.checksum);
        }
        for (si, &scheme) in setup.schemes.iter().enumerate() {
            let mut sum = 0.0;
            let mut n_ok = 0usize;
            let mut n_fail = 0usize;
            for o in &outcomes {
                match &o.per_scheme[si] {
                    Ok(sq) => {
                        sum += sq;
                        n_ok += 1;
                    }
                    Err(SampleFailure::Unstable(msg)) => {
                        log::debug!("dt={} scheme={} failure: {msg}", fmt_dt(dt), scheme);
                        n_fail += 1;
                    }
                }
            }
            let rms = if n_ok > 0 { Some((sum / n_ok as f64).sqrt()) } else { None };
            let row = ErrorRow {
                scheme: scheme.name().to_string(),
                dt,
                rms_error: rms,
                n_samples: n_ok,
                n_failures: n_fail,
            };
            let rms_text = match row.rms_error {
                Some(v) => format!("{v:.16e}"),
                None => "NaN".to_string(),
            };
            writeln!(csv, "{},{},{},{},{}", row.scheme, row.dt, rms_text, row.n_samples, row.n_failures)
                .map_err(io_err(&csv_path))?;
            csv.flush().map_err(io_err(&csv_path))?;
            log::info!(
                "dt={} scheme={} rms={} failures={}",
                fmt_dt(dt),
                scheme,
                rms_text,
                row.n_failures
            );
            rows.push(row);
        }
    }

    let mut fits = Vec::new();
    for &scheme in &setup.schemes {
        let scheme_rows: Vec<&ErrorRow> =
            rows.iter().filter(|r| r.scheme == scheme.name()).collect();
        let stable = stable_points(&scheme_rows);
        let excluded = scheme_rows.len() - stable.len();
        let mut flags = Vec::new();
        if excluded > 0 {
            flags.push(format!(
                "{excluded} step size(s) excluded from the fit as unstable \
                 (failures or error above {INSTABILITY_FACTOR}x the smallest-dt error)"
            ));
        }
        let fit = fit_order(&stable);
        if fit.is_none() {
            flags.push("fewer than two stable points; no order fitted".to_string());
        }
        fits.push(OrderFit {
            scheme: scheme.name().to_string(),
            slope: fit.map(|f| f.0),
            intercept: fit.map(|f| f.1),
            stable_dts: stable.iter().map(|p| p.0).collect(),
            flags,
        });
    }

    let config_text = cfg.to_text();
    let report = ConvergenceReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: format!("{:016x}", fnv1a(&config_text)),
        config_text,
        rows,
        fits,
        path_checksum_xor: sample_checksums.iter().flatten().fold(0u64, |a, &c| a ^ c),
    };

    let json_path = cfg.out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&json_path, json).map_err(io_err(&json_path))?;

    let series: Vec<Series> = setup
        .schemes
        .iter()
        .map(|s| Series {
            label: s.name(),
            points: report
                .rows
                .iter()
                .filter(|r| r.scheme == s.name())
                .map(|r| (r.dt, r.rms_error.unwrap_or(f64::NAN)))
                .collect(),
        })
        .collect();
    let svg_path = cfg.out_dir.join("loglog.svg");
    fs::write(&svg_path, loglog_svg("strong convergence", &series, &[0.5, 1.0]))
        .map_err(io_err(&svg_path))?;
    Ok(report)
}
