//! One-step exponential integrators and the sample-path driver.
//!
//! All three schemes advance `X' = A_h X + F(X) + noise` by exponential
//! actions computed with the Krylov machinery:
//!
//! * [`sers_step`]: relinearizes at the current state, propagates state and
//!   noise with `e^{dt (A_h + J_m)}` and the remainder with `dt*phi1`;
//! * [`sers_full_exp_step`]: one exponential applied to the whole bracket
//!   `X + B dW + dt G_m(X)`;
//! * [`setd1_step`]: exponential time differencing with the fixed operator
//!   `A_h` and no relinearization.
//!
//! Dirichlet DOFs are pinned to their boundary values after every step and
//! their noise increments are zeroed.

use crate::assembly::{apply_nemytskii, assemble_jacobian, AssemblyError};
use crate::krylov::{expm_action, phi1_action, KrylovConfig, KrylovError};
use crate::mesh::StructuredMesh2D;
use crate::noise::{BrownianPath, NoiseError, SpectralNoiseModel};
use crate::problem::SpdeProblem;
use crate::sparse::SparseOperator;
use crate::vecops::all_finite;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Time-stepping scheme identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeId {
    Sers,
    SersFullExp,
    Setd1,
}

impl SchemeId {
    pub const ALL: [SchemeId; 3] = [SchemeId::Sers, SchemeId::SersFullExp, SchemeId::Setd1];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeId::Sers => "sers",
            SchemeId::SersFullExp => "sers_full_exp",
            SchemeId::Setd1 => "setd1",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sers" => Ok(SchemeId::Sers),
            "sers_full_exp" | "sers-full-exp" => Ok(SchemeId::SersFullExp),
            "setd1" => Ok(SchemeId::Setd1),
            other => Err(format!(
                "unknown scheme {other:?}; expected one of sers, sers_full_exp, setd1"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Krylov(#[from] KrylovError),
    #[error(transparent)]
    Sparse(#[from] crate::sparse::SparseError),
    #[error("state became non-finite")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("step {step} (dt={dt}) failed: {source}")]
    Step { step: usize, dt: f64, source: StepError },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

impl IntegrateError {
    /// Non-finite blowups are recorded as sample failures rather than hard
    /// errors by the study harness.
    pub fn is_instability(&self) -> bool {
        matches!(
            self,
            IntegrateError::Step { source: StepError::NonFinite, .. }
                | IntegrateError::Step { source: StepError::Krylov(KrylovError::NoConvergence { .. }), .. }
                | IntegrateError::Step { source: StepError::Krylov(KrylovError::NonFiniteInput), .. }
                | IntegrateError::Step { source: StepError::Assembly(AssemblyError::NonFiniteState), .. }
        )
    }
}

/// Immutable per-problem data shared by every step of an integration.
pub struct SchemeContext<'a> {
    pub problem: &'a SpdeProblem,
    pub mesh: &'a StructuredMesh2D,
    pub a_h: &'a SparseOperator,
    pub krylov: KrylovConfig,
    dirichlet: Vec<Option<f64>>,
}

impl<'a> SchemeContext<'a> {
    pub fn new(
        problem: &'a SpdeProblem,
        mesh: &'a StructuredMesh2D,
        a_h: &'a SparseOperator,
        krylov: KrylovConfig,
    ) -> Self {
        assert_eq!(a_h.n(), mesh.n_nodes(), "operator dimension must match mesh");
        let dirichlet = problem.dirichlet_values(mesh);
        Self { problem, mesh, a_h, krylov, dirichlet }
    }

    pub fn dirichlet(&self) -> &[Option<f64>] {
        &self.dirichlet
    }

    /// Initial nodal state with boundary values folded in.
    pub fn initial_state(&self) -> Vec<f64> {
        let mut x = self.problem.initial.nodal(self.mesh);
        self.pin(&mut x);
        x
    }

    fn pin(&self, x: &mut [f64]) {
        for (xv, d) in x.iter_mut().zip(&self.dirichlet) {
            if let Some(g) = d {
                *xv = *g;
            }
        }
    }

    /// Nodal noise term `b(x_k, X_k) * dW_k`, zero on Dirichlet nodes.
    fn noise_term(&self, x: &[f64], dw: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                if self.dirichlet[k].is_some() {
                    0.0
                } else {
                    self.problem.noise_coeff.eval(self.mesh.node_xy(k).into(), x[k]) * dw[k]
                }
            })
            .collect()
    }
}

/// State of one trajectory at a step boundary.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub t: f64,
    pub step_index: usize,
    pub x: Vec<f64>,
}

impl SchemeState {
    pub fn initial(ctx: &SchemeContext) -> Self {
        Self { t: 0.0, step_index: 0, x: ctx.initial_state() }
    }
}

fn advance(ctx: &SchemeContext, state: &SchemeState, dt: f64, mut x: Vec<f64>) -> Result<SchemeState, StepError> {
    ctx.pin(&mut x);
    if !all_finite(&x) {
        return Err(StepError::NonFinite);
    }
    Ok(SchemeState { t: state.t + dt, step_index: state.step_index + 1, x })
}

/// Exponential Rosenbrock step: relinearize at `X_m`, then
/// `X_{m+1} = e^{dt M} X_m + dt phi1(dt M) G_m(X_m) + e^{dt M} B(X_m) dW`
/// with `M = A_h + J_m`.
pub fn sers_step(
    ctx: &SchemeContext,
    state: &SchemeState,
    dt: f64,
    dw: &[f64],
) -> Result<SchemeState, StepError> {
    let x = &state.x;
    let jac = assemble_jacobian(ctx.problem, ctx.mesh, x)?;
    let m = ctx.a_h.plus_diag(&jac.diag)?;
    let f = apply_nemytskii(ctx.problem, ctx.mesh, x)?;
    let g: Vec<f64> = f.iter().zip(jac.diag.iter().zip(x)).map(|(fv, (j, xv))| fv - j * xv).collect();
    let bw = ctx.noise_term(x, dw);

    let drift = expm_action(&m, x, dt, &ctx.krylov)?;
    let rem = phi1_action(&m, &g, dt, &ctx.krylov)?;
    let noise = expm_action(&m, &bw, dt, &ctx.krylov)?;
    let next = drift
        .iter()
        .zip(rem.iter().zip(&noise))
        .map(|(a, (b, c))| a + dt * b + c)
        .collect();
    advance(ctx, state, dt, next)
}

/// Full-exponential variant: one exponential on the summed bracket,
/// `X_{m+1} = e^{dt M} [X_m + B(X_m) dW + dt G_m(X_m)]`.
pub fn sers_full_exp_step(
    ctx: &SchemeContext,
    state: &SchemeState,
    dt: f64,
    dw: &[f64],
) -> Result<SchemeState, StepError> {
    let x = &state.x;
    let jac = assemble_jacobian(ctx.problem, ctx.mesh, x)?;
    let m = ctx.a_h.plus_diag(&jac.diag)?;
    let f = apply_nemytskii(ctx.problem, ctx.mesh, x)?;
    let bw = ctx.noise_term(x, dw);
    let bracket: Vec<f64> = x
        .iter()
        .zip(f.iter().zip(jac.diag.iter().zip(x.iter().zip(&bw))))
        .map(|(xv, (fv, (j, (xq, b))))| xv + b + dt * (fv - j * xq))
        .collect();
    let next = expm_action(&m, &bracket, dt, &ctx.krylov)?;
    advance(ctx, state, dt, next)
}

/// Exponential time differencing with the fixed linear part:
/// `Z_{m+1} = e^{dt A_h}(Z_m + B(Z_m) dW) + dt phi1(dt A_h) F(Z_m)`.
pub fn setd1_step(
    ctx: &SchemeContext,
    state: &SchemeState,
    dt: f64,
    dw: &[f64],
) -> Result<SchemeState, StepError> {
    let x = &state.x;
    let f = apply_nemytskii(ctx.problem, ctx.mesh, x)?;
    let bw = ctx.noise_term(x, dw);
    let xin: Vec<f64> = x.iter().zip(&bw).map(|(a, b)| a + b).collect();
    let drift = expm_action(ctx.a_h, &xin, dt, &ctx.krylov)?;
    let rem = phi1_action(ctx.a_h, &f, dt, &ctx.krylov)?;
    let next = drift.iter().zip(&rem).map(|(a, b)| a + dt * b).collect();
    advance(ctx, state, dt, next)
}

pub fn scheme_step(
    scheme: SchemeId,
    ctx: &SchemeContext,
    state: &SchemeState,
    dt: f64,
    dw: &[f64],
) -> Result<SchemeState, StepError> {
    match scheme {
        SchemeId::Sers => sers_step(ctx, state, dt, dw),
        SchemeId::SersFullExp => sers_full_exp_step(ctx, state, dt, dw),
        SchemeId::Setd1 => setd1_step(ctx, state, dt, dw),
    }
}

/// Advance one sample from 0 to the path's final time at dyadic `level`
/// (coarse step = `2^level` fine steps) and return the final nodal state.
pub fn integrate(
    ctx: &SchemeContext,
    model: &SpectralNoiseModel,
    path: &BrownianPath,
    scheme: SchemeId,
    level: u32,
) -> Result<Vec<f64>, IntegrateError> {
    let n_steps = path.steps_at_level(level)?;
    let dt = path.dt_fine() * (path.n_fine() / n_steps) as f64;
    let mut state = SchemeState::initial(ctx);
    for m in 0..n_steps {
        let db = path.coarse_increment(level, m)?;
        let dw = model.increment_to_nodal(&db)?;
        state = scheme_step(scheme, ctx, &state, dt, &dw)
            .map_err(|source| IntegrateError::Step { step: m, dt, source })?;
    }
    Ok(state.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_lumped_mass, assemble_operator, remainder};
    use crate::dense::{dense_expm, dense_phi1, DenseMatrix};
    use crate::problem::{InitialValue, NoiseCoeff, Reaction, VelocityField};
    use crate::rng::{sample_rng, StreamTag};
    use approx::assert_relative_eq;

    fn small_mesh() -> StructuredMesh2D {
        StructuredMesh2D::new(1.0, 1.0, 6, 6).unwrap()
    }

    fn no_noise(problem: &mut SpdeProblem) {
        problem.noise_coeff = NoiseCoeff::Constant { value: 0.0 };
    }

    fn zero_dw(n: usize) -> Vec<f64> {
        vec![0.0; n]
    }

    #[test]
    fn linear_drift_reduces_to_one_exponential() {
        let mesh = small_mesh();
        let mut p = SpdeProblem::example1();
        no_noise(&mut p);
        p.initial = InitialValue::Mode { i: 1, j: 1, amp: 1.0 };
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let state = SchemeState::initial(&ctx);
        let dt = 0.05;
        let dw = zero_dw(mesh.n_nodes());

        let jac = assemble_jacobian(&p, &mesh, &state.x).unwrap();
        let m = a.plus_diag(&jac.diag).unwrap();
        let direct = expm_action(&m, &state.x, dt, &ctx.krylov).unwrap();

        let sers = sers_step(&ctx, &state, dt, &dw).unwrap();
        assert_eq!(sers.x, direct, "linear f, no noise: SERS is the pure exponential");

        let full = sers_full_exp_step(&ctx, &state, dt, &dw).unwrap();
        assert_eq!(full.x, sers.x, "schemes coincide when the remainder vanishes");
    }

    #[test]
    fn constant_state_is_invariant_under_pure_diffusion() {
        let mesh = small_mesh();
        let mut p = SpdeProblem::example1();
        p.reaction = Reaction::None;
        no_noise(&mut p);
        p.initial = InitialValue::Constant(3.0);
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let state = SchemeState::initial(&ctx);
        let dw = zero_dw(mesh.n_nodes());
        for next in [
            sers_step(&ctx, &state, 0.5, &dw).unwrap(),
            setd1_step(&ctx, &state, 0.5, &dw).unwrap(),
        ] {
            for v in &next.x {
                assert_relative_eq!(*v, 3.0, max_relative = 1e-13);
            }
            assert_eq!(next.step_index, 1);
            assert_relative_eq!(next.t, 0.5);
        }
    }

    #[test]
    fn setd1_without_reaction_is_pure_semigroup() {
        let mesh = small_mesh();
        let mut p = SpdeProblem::example1();
        p.reaction = Reaction::None;
        no_noise(&mut p);
        p.initial = InitialValue::Mode { i: 2, j: 0, amp: 1.0 };
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let state = SchemeState::initial(&ctx);
        let dt = 0.1;
        let direct = expm_action(&a, &state.x, dt, &ctx.krylov).unwrap();
        let stepped = setd1_step(&ctx, &state, dt, &zero_dw(mesh.n_nodes())).unwrap();
        assert_eq!(stepped.x, direct);
    }

    #[test]
    fn full_exp_at_zero_dt_returns_state_plus_noise() {
        let mesh = small_mesh();
        let p = SpdeProblem::example1();
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let mut state = SchemeState::initial(&ctx);
        state.x.iter_mut().enumerate().for_each(|(k, v)| *v = 0.1 * k as f64);
        let dw: Vec<f64> = (0..mesh.n_nodes()).map(|k| 0.01 * (k as f64).sin()).collect();
        let next = sers_full_exp_step(&ctx, &state, 0.0, &dw).unwrap();
        // dt = 0 kills the dt-scaled remainder; e^0 = I leaves X + B dW
        for k in 0..mesh.n_nodes() {
            assert_relative_eq!(next.x[k], state.x[k] + dw[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn full_exp_and_sers_differ_at_second_order() {
        // Richardson sweep: for nonlinear f without noise the two schemes
        // agree to O(dt^2) per step
        let mesh = small_mesh();
        let mut p = SpdeProblem::example1();
        p.reaction = Reaction::MichaelisMenten { coeff: -10.0 };
        no_noise(&mut p);
        p.initial = InitialValue::Constant(1.0);
        let a = assemble_operator(&p, &mesh).unwrap();
        let cfg = KrylovConfig { tol: 1e-12, ..Default::default() };
        let ctx = SchemeContext::new(&p, &mesh, &a, cfg);
        let state = SchemeState::initial(&ctx);
        let dw = zero_dw(mesh.n_nodes());
        let mass = assemble_lumped_mass(&mesh);
        let mut diffs = Vec::new();
        let dts = [0.2, 0.1, 0.05, 0.025];
        for &dt in &dts {
            let s = sers_step(&ctx, &state, dt, &dw).unwrap();
            let f = sers_full_exp_step(&ctx, &state, dt, &dw).unwrap();
            let d: Vec<f64> = s.x.iter().zip(&f.x).map(|(a, b)| a - b).collect();
            diffs.push(mass.norm(&d));
        }
        let slope = (diffs[0] / diffs[3]).log2() / 3.0;
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}, diffs {diffs:?}");
    }

    #[test]
    fn three_term_form_equals_single_bracket_form() {
        // dense-oracle check of the algebraic identity
        //   e^{dt M} X + dt phi1(dt M) G + e^{dt M} B dW
        // = X + B dW + dt phi1(dt M) [M (X + B dW) + G]
        // and of the Krylov three-term realization against it
        let mesh = small_mesh();
        let mut p = SpdeProblem::example1();
        p.reaction = Reaction::MichaelisMenten { coeff: -10.0 };
        p.velocity = Some(VelocityField::synthetic(&mesh, 1.0, 0.5));
        let a = assemble_operator(&p, &mesh).unwrap();
        let cfg = KrylovConfig::default();
        let ctx = SchemeContext::new(&p, &mesh, &a, cfg.clone());

        let n = mesh.n_nodes();
        let mut rng = sample_rng(31, 0, StreamTag::Path);
        use rand::Rng;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.5)).collect();
        let dw: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let dt = 0.08;

        let state = SchemeState { t: 0.0, step_index: 0, x: x.clone() };
        let krylov_result = sers_step(&ctx, &state, dt, &dw).unwrap();

        let jac = assemble_jacobian(&p, &mesh, &x).unwrap();
        let m = a.plus_diag(&jac.diag).unwrap();
        let g = remainder(&p, &mesh, &x, &x).unwrap();
        let bw = ctx.noise_term(&x, &dw);
        let dm = DenseMatrix::from_sparse(&m);
        let e = dense_expm(&dm, dt).unwrap();
        let p1 = dense_phi1(&dm, dt).unwrap();

        // three-term form, dense
        let mut three: Vec<f64> = e.apply(&x);
        let rem = p1.apply(&g);
        let noise = e.apply(&bw);
        for k in 0..n {
            three[k] += dt * rem[k] + noise[k];
        }
        // single-bracket form, dense
        let xb: Vec<f64> = x.iter().zip(&bw).map(|(a, b)| a + b).collect();
        let mut inner = m.matvec(&xb);
        for k in 0..n {
            inner[k] += g[k];
        }
        let bracket_term = p1.apply(&inner);
        let bracket: Vec<f64> = (0..n).map(|k| xb[k] + dt * bracket_term[k]).collect();

        let mass = assemble_lumped_mass(&mesh);
        let d_forms: Vec<f64> = three.iter().zip(&bracket).map(|(a, b)| a - b).collect();
        assert!(
            mass.norm(&d_forms) <= 1e-11 * mass.norm(&three).max(1.0),
            "dense forms disagree: {}",
            mass.norm(&d_forms)
        );
        let d_krylov: Vec<f64> = krylov_result.x.iter().zip(&three).map(|(a, b)| a - b).collect();
        assert!(
            mass.norm(&d_krylov) <= 10.0 * cfg.tol * mass.norm(&three).max(1.0),
            "krylov vs dense: {}",
            mass.norm(&d_krylov)
        );
    }

    #[test]
    fn dirichlet_dofs_stay_pinned() {
        let mesh = small_mesh();
        let p = SpdeProblem::example2(VelocityField::synthetic(&mesh, 1.0, 0.5));
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let mut state = SchemeState::initial(&ctx);
        let mut rng = sample_rng(9, 0, StreamTag::Path);
        use rand::Rng;
        for _ in 0..3 {
            let dw: Vec<f64> = (0..mesh.n_nodes()).map(|_| rng.gen_range(-0.2..0.2)).collect();
            for scheme in SchemeId::ALL {
                let next = scheme_step(scheme, &ctx, &state, 0.05, &dw).unwrap();
                for (k, d) in ctx.dirichlet().iter().enumerate() {
                    if let Some(g) = d {
                        assert_eq!(next.x[k], *g, "scheme {scheme}, node {k}");
                    }
                }
            }
            state = sers_step(&ctx, &state, 0.05, &dw).unwrap();
        }
    }

    #[test]
    fn integrate_constant_neumann_is_constant() {
        let mesh = small_mesh();
        let mut p = SpdeProblem::example1();
        p.reaction = Reaction::None;
        no_noise(&mut p);
        p.initial = InitialValue::Constant(2.0);
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let model = SpectralNoiseModel::new(0.7, 3, &mesh).unwrap();
        let path = crate::noise::sample_path(&model, 7, 1.0, 8).unwrap();
        let x = integrate(&ctx, &model, &path, SchemeId::Sers, 1).unwrap();
        for v in &x {
            assert_relative_eq!(*v, 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn linear_autonomous_endpoint_is_step_count_independent() {
        let mesh = small_mesh();
        let mut p = SpdeProblem::example1();
        no_noise(&mut p);
        p.initial = InitialValue::Mode { i: 1, j: 0, amp: 1.0 };
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let model = SpectralNoiseModel::new(0.7, 3, &mesh).unwrap();
        let path = crate::noise::sample_path(&model, 7, 0.02, 2).unwrap();
        let one = integrate(&ctx, &model, &path, SchemeId::Sers, 1).unwrap();
        let two = integrate(&ctx, &model, &path, SchemeId::Sers, 0).unwrap();
        let mass = assemble_lumped_mass(&mesh);
        let d: Vec<f64> = one.iter().zip(&two).map(|(a, b)| a - b).collect();
        let x0 = ctx.initial_state();
        assert!(
            mass.norm(&d) <= 2.0 * ctx.krylov.tol * mass.norm(&x0),
            "endpoint difference {}",
            mass.norm(&d)
        );
    }

    #[test]
    fn zero_noise_runs_are_bit_identical() {
        let mesh = small_mesh();
        let mut p = SpdeProblem::example1();
        p.reaction = Reaction::MichaelisMenten { coeff: -10.0 };
        no_noise(&mut p);
        p.initial = InitialValue::Constant(1.0);
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let model = SpectralNoiseModel::new(0.7, 3, &mesh).unwrap();
        let path = crate::noise::sample_path(&model, 3, 0.5, 8).unwrap();
        let r1 = integrate(&ctx, &model, &path, SchemeId::Sers, 1).unwrap();
        let r2 = integrate(&ctx, &model, &path, SchemeId::Sers, 1).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn instability_is_reported_with_step_index() {
        // explosive reaction with a huge step drives the state non-finite
        let mesh = small_mesh();
        let mut p = SpdeProblem::example1();
        p.reaction = Reaction::Linear { coeff: 400.0 };
        p.initial = InitialValue::Constant(1e150);
        no_noise(&mut p);
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let model = SpectralNoiseModel::new(0.7, 3, &mesh).unwrap();
        let path = crate::noise::sample_path(&model, 3, 2.0, 4).unwrap();
        match integrate(&ctx, &model, &path, SchemeId::Sers, 0) {
            Err(e) => assert!(e.is_instability(), "unexpected error kind: {e}"),
            Ok(_) => panic!("expected a blow-up"),
        }
    }

    #[test]
    fn sample_mean_matches_deterministic_decay() {
        // additive linear dynamics: spatial average evolves deterministically,
        // noise-mode projections have mean zero
        let mesh = StructuredMesh2D::new(1.0, 1.0, 8, 8).unwrap();
        let mut p = SpdeProblem::example1();
        p.initial = InitialValue::Constant(1.0);
        let a = assemble_operator(&p, &mesh).unwrap();
        let ctx = SchemeContext::new(&p, &mesh, &a, KrylovConfig::default());
        let model = SpectralNoiseModel::new(0.7, 4, &mesh).unwrap();
        let mass = assemble_lumped_mass(&mesh);
        let t_final = 0.05;
        let n_samples = 1000;
        let e10 = model.eig_column(model.modes().iter().position(|&m| m == (1, 0)).unwrap());
        let mut avg_acc = 0.0;
        let mut proj = Vec::with_capacity(n_samples);
        for s in 0..n_samples {
            let seed = crate::rng::derive_seed(77, s as u64, StreamTag::Path);
            let path = crate::noise::sample_path(&model, seed, t_final, 8).unwrap();
            let x = integrate(&ctx, &model, &path, SchemeId::Sers, 1).unwrap();
            avg_acc += mass.dot(&x, &vec![1.0; x.len()]) / mass.total();
            proj.push(mass.dot(&x, &e10));
        }
        let avg = avg_acc / n_samples as f64;
        let det = (-100.0 * t_final).exp();
        assert!((avg - det).abs() < 1e-4, "average {avg} vs deterministic {det}");
        let mean = proj.iter().sum::<f64>() / n_samples as f64;
        let var = proj.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_samples - 1) as f64;
        let band = 3.0 * (var / n_samples as f64).sqrt();
        assert!(mean.abs() < band, "mode mean {mean} exceeds 3 sigma {band}");
    }

    #[test]
    fn scheme_id_round_trip() {
        for s in SchemeId::ALL {
            assert_eq!(s.name().parse::<SchemeId>().unwrap(), s);
        }
        assert!("euler".parse::<SchemeId>().is_err());
    }
}
