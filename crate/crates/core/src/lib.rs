//! Monte Carlo strong-convergence experiments for semilinear stochastic PDEs
//! on 2D rectangles.
//!
//! The crate integrates `dX = [div(D grad X) - q.grad X + f(x,X)]dt + b(x,X)dW`
//! with exponential one-step schemes whose matrix functions are evaluated by
//! Krylov projection:
//!
//! * `SERS` relinearizes the drift at every step and propagates with the
//!   perturbed operator `A_h + J_m`;
//! * `SERS_FULL_EXP` applies the step exponential to the whole bracket;
//! * `SETD1` keeps the fixed linear part `A_h`.
//!
//! A harness couples all schemes and a reference solution (exact per-mode
//! Ornstein-Uhlenbeck dynamics for the additive linear experiment, a fine-step
//! integration otherwise) through one dyadic Brownian path per sample, and
//! fits observed strong-convergence orders.

pub mod assembly;
pub mod dense;
pub mod exact;
pub mod harness;
pub mod integrators;
pub mod krylov;
pub mod mesh;
pub mod noise;
pub mod plot;
pub mod problem;
pub mod rng;
pub mod selftest;
pub mod sparse;
mod vecops;

pub use assembly::{apply_nemytskii, assemble_jacobian, assemble_lumped_mass, assemble_operator, remainder, LumpedMass};
pub use integrators::SchemeId;
pub use krylov::{expm_action, phi1_action, KrylovConfig};
pub use mesh::StructuredMesh2D;
pub use noise::{sample_path, BrownianPath, SpectralNoiseModel};
pub use problem::SpdeProblem;
pub use sparse::SparseOperator;
