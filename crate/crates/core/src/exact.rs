//! Exact solution of the additive linear experiment, realized mode by mode as
//! Ornstein-Uhlenbeck dynamics coupled pathwise to the Brownian increments the
//! schemes consume.
//!
//! For `dX = [d*Lap X + c*X]dt + dW` with homogeneous Neumann conditions the
//! cosine modes decouple: coefficient `(i,j)` follows
//! `dc = -mu c dt + sqrt(q) dbeta` with `mu = d*lambda_{i,j} - c`. The exact
//! transition over a step needs the convolution integral
//! `I = int e^{-mu(t+dt-s)} dbeta(s)`, which is jointly Gaussian with the
//! plain increment `dbeta`; it is sampled from its conditional law given the
//! increment, so exact endpoints and scheme endpoints share one realization.

use crate::noise::{BrownianPath, SpectralNoiseModel};
use crate::problem::{InitialValue, Reaction, SpdeProblem};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("exact reference requires isotropic diffusion, no advection, linear reaction, additive noise and pure Neumann conditions")]
    UnsupportedProblem,
    #[error("mode decay rates must be positive, got mu={mu} for mode ({i},{j})")]
    NonPositiveRate { mu: f64, i: usize, j: usize },
    #[error("coefficient vector has {got} modes, system has {want}")]
    ModeCountMismatch { got: usize, want: usize },
    #[error("conditional variance {var:.3e} is negative beyond rounding (var_i {var_i:.3e})")]
    NegativeConditionalVariance { var: f64, var_i: f64 },
    #[error("initial value of kind Mode({i},{j}) is not in the truncated mode set")]
    InitialModeOutsideTruncation { i: usize, j: usize },
}

/// Decoupled OU rates for the noise-carrying modes plus the deterministic
/// constant mode.
#[derive(Debug, Clone)]
pub struct OuModeSystem {
    mu: Vec<f64>,
    sqrt_q: Vec<f64>,
    /// Decay rate of the constant (0,0) mode, driven by the reaction alone.
    mu0: f64,
}

impl OuModeSystem {
    /// Build from a problem of the additive linear family.
    pub fn from_problem(
        problem: &SpdeProblem,
        model: &SpectralNoiseModel,
    ) -> Result<Self, ExactError> {
        use std::f64::consts::PI;
        let d = problem.diffusion;
        let supported = d.is_diagonal()
            && d.dxx == d.dyy
            && problem.velocity.is_none()
            && !problem.has_dirichlet()
            && matches!(problem.reaction, Reaction::Linear { .. } | Reaction::None)
            && matches!(problem.noise_coeff, crate::problem::NoiseCoeff::Constant { .. });
        if !supported {
            return Err(ExactError::UnsupportedProblem);
        }
        let c = match problem.reaction {
            Reaction::Linear { coeff } => coeff - problem.garding_shift,
            _ => -problem.garding_shift,
        };
        let (lx, ly) = model.domain();
        let mut mu = Vec::with_capacity(model.n_active_modes());
        for &(i, j) in model.modes() {
            let lambda = (i as f64 * PI / lx).powi(2) + (j as f64 * PI / ly).powi(2);
            let rate = d.dxx * lambda - c;
            if rate <= 0.0 {
                return Err(ExactError::NonPositiveRate { mu: rate, i, j });
            }
            mu.push(rate);
        }
        let mu0 = -c;
        if mu0 <= 0.0 {
            return Err(ExactError::NonPositiveRate { mu: mu0, i: 0, j: 0 });
        }
        Ok(Self { mu, sqrt_q: model.q_values().iter().map(|q| q.sqrt()).collect(), mu0 })
    }

    pub fn n_modes(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
}

/// Spectral coefficients of the exact solution.
#[derive(Debug, Clone)]
pub struct OuState {
    /// Coefficient of the constant mode (noise-free, decays deterministically).
    pub c0: f64,
    /// Coefficients of the noise-carrying modes, aligned with the model's
    /// mode list.
    pub coeffs: Vec<f64>,
}

impl OuState {
    pub fn zero(system: &OuModeSystem) -> Self {
        Self { c0: 0.0, coeffs: vec![0.0; system.n_modes()] }
    }

    /// Spectral coefficients of an initial value.
    pub fn from_initial(
        initial: &InitialValue,
        system: &OuModeSystem,
        model: &SpectralNoiseModel,
    ) -> Result<Self, ExactError> {
        let mut state = Self::zero(system);
        match *initial {
            InitialValue::Zero => {}
            InitialValue::Constant(v) => {
                // constant field v = c0 * e_{0,0} with e_{0,0} = 1/sqrt(lx*ly)
                let (lx, ly) = model.domain();
                state.c0 = v * (lx * ly).sqrt();
            }
            InitialValue::Mode { i, j, amp } => {
                if i + j == 0 {
                    state.c0 = amp;
                } else {
                    let idx = model
                        .modes()
                        .iter()
                        .position(|&m| m == (i, j))
                        .ok_or(ExactError::InitialModeOutsideTruncation { i, j })?;
                    state.coeffs[idx] = amp;
                }
            }
        }
        Ok(state)
    }
}

/// Conditional variance floor: tiny negative values from rounding are clamped,
/// anything worse is a hard error.
const COND_VAR_CLAMP: f64 = 1e-14;

/// Sample the convolution integral `I` given the Brownian increment over the
/// same step.
///
/// Joint law: `Var(dbeta) = dt`, `Var(I) = (1 - e^{-2 mu dt})/(2 mu)`,
/// `Cov(dbeta, I) = (1 - e^{-mu dt})/mu`; the conditional distribution of `I`
/// given `dbeta` is Gaussian with mean `Cov/dt * dbeta` and variance
/// `Var(I) - Cov^2/dt`.
pub fn sample_coupled_pair<R: Rng + ?Sized>(
    mu: f64,
    dt: f64,
    dbeta: f64,
    rng: &mut R,
) -> Result<f64, ExactError> {
    debug_assert!(mu > 0.0 && dt > 0.0);
    let e = (-mu * dt).exp();
    let var_i = (1.0 - e * e) / (2.0 * mu);
    let cov = (1.0 - e) / mu;
    let mean = cov / dt * dbeta;
    let mut cond_var = var_i - cov * cov / dt;
    if cond_var < 0.0 {
        if cond_var.abs() < COND_VAR_CLAMP * var_i {
            cond_var = 0.0;
        } else {
            return Err(ExactError::NegativeConditionalVariance { var: cond_var, var_i });
        }
    }
    Ok(mean + cond_var.sqrt() * rng.sample::<f64, _>(StandardNormal))
}

/// One exact transition: `c <- e^{-mu dt} c + sqrt(q) I` per mode, plus the
/// deterministic decay of the constant mode.
pub fn ou_exact_step(
    system: &OuModeSystem,
    state: &mut OuState,
    dt: f64,
    integrals: &[f64],
) -> Result<(), ExactError> {
    if integrals.len() != system.n_modes() || state.coeffs.len() != system.n_modes() {
        return Err(ExactError::ModeCountMismatch {
            got: integrals.len().max(state.coeffs.len()),
            want: system.n_modes(),
        });
    }
    for ((c, &mu), (&sq, &i)) in state
        .coeffs
        .iter_mut()
        .zip(&system.mu)
        .zip(system.sqrt_q.iter().zip(integrals))
    {
        *c = (-mu * dt).exp() * *c + sq * i;
    }
    state.c0 *= (-system.mu0 * dt).exp();
    Ok(())
}

/// Drive the exact solution across a whole path at the fine resolution,
/// sampling the convolution integrals conditionally on each fine increment.
pub fn evolve_exact<R: Rng + ?Sized>(
    system: &OuModeSystem,
    mut state: OuState,
    path: &BrownianPath,
    rng: &mut R,
) -> Result<OuState, ExactError> {
    let dt = path.dt_fine();
    let mut integrals = vec![0.0; system.n_modes()];
    for step in 0..path.n_fine() {
        let db = path.fine_increment(step);
        for (k, i) in integrals.iter_mut().enumerate() {
            *i = sample_coupled_pair(system.mu[k], dt, db[k], rng)?;
        }
        ou_exact_step(system, &mut state, dt, &integrals)?;
    }
    Ok(state)
}

/// Evaluate the spectral state at the mesh nodes:
/// `X(x_k) = c0 e_{0,0}(x_k) + sum c_{i,j} e_{i,j}(x_k)`.
pub fn exact_nodal_solution(state: &OuState, model: &SpectralNoiseModel) -> Vec<f64> {
    // reuse the tensor contraction by treating coefficients as sqrt(q)-free
    // increments: dW field = sum sqrt(q) e db, so feed db = c / sqrt(q).
    let scaled: Vec<f64> = state
        .coeffs
        .iter()
        .zip(model.q_values())
        .map(|(c, q)| c / q.sqrt())
        .collect();
    let mut field = model.increment_to_nodal(&scaled).expect("mode count aligned");
    let (lx, ly) = model.domain();
    let e00 = 1.0 / (lx * ly).sqrt();
    for v in &mut field {
        *v += state.c0 * e00;
    }
    field
}
