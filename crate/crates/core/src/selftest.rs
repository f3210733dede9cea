//! Kernel-level verification suites, shared between the `selftest` CLI
//! command and the acceptance test target. Each suite checks a numerical
//! kernel against an independent oracle and reports one line per check.

use crate::assembly::{assemble_lumped_mass, assemble_operator};
use crate::dense::{dense_expm, dense_phi1, DenseMatrix};
use crate::exact::sample_coupled_pair;
use crate::krylov::{expm_action, phi1_action, KrylovConfig};
use crate::mesh::StructuredMesh2D;
use crate::noise::{sample_path, ulp_distance, SpectralNoiseModel};
use crate::problem::{DiffusionTensor, SpdeProblem};
use crate::rng::derive_rng;
use crate::sparse::SparseOperator;
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Krylov,
    Noise,
    Ou,
    Assembly,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Krylov, Suite::Noise, Suite::Ou, Suite::Assembly];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Krylov => "krylov",
            Suite::Noise => "noise",
            Suite::Ou => "ou",
            Suite::Assembly => "assembly",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "krylov" => Ok(Suite::Krylov),
            "noise" => Ok(Suite::Noise),
            "ou" => Ok(Suite::Ou),
            "assembly" => Ok(Suite::Assembly),
            other => Err(format!("unknown selftest suite {other:?}; expected krylov, noise, ou or assembly")),
        }
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

pub fn run_suite(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Krylov => krylov_suite(),
        Suite::Noise => noise_suite(),
        Suite::Ou => ou_suite(),
        Suite::Assembly => assembly_suite(),
    }
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    d / vec_norm(b).max(1e-300)
}

/// Random stable sparse matrix whose diagonal spans the requested stiffness
/// ratio logarithmically, plus bounded random couplings.
pub fn random_stiff_operator(n: usize, stiffness: f64, seed: u64) -> SparseOperator {
    let mut rng = derive_rng(seed, 0xA11CE);
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let d = -stiffness.powf(r as f64 / (n - 1) as f64);
        let mut row = vec![(r, d)];
        for _ in 0..4 {
            let c = rng.gen_range(0..n);
            if c != r {
                row.push((c, rng.gen_range(-1.0..1.0)));
            }
        }
        rows.push(row);
    }
    SparseOperator::from_rows(n, rows).expect("well-formed")
}

/// Krylov oracle suite: actions against dense scaling-and-squaring results on
/// random stiff matrices, plus the functional identity linking phi1 and the
/// exponential.
fn krylov_suite() -> Vec<Check> {
    let n = 100;
    let n_matrices = 50;
    let tau = 0.1;
    // tighter control than the reported bound so the comparison has margin
    let cfg = KrylovConfig { tol: 1e-8, ..KrylovConfig::default() };
    let mut worst_expm = 0.0f64;
    let mut worst_phi1 = 0.0f64;
    let mut worst_identity = 0.0f64;
    let mut failures = Vec::new();
    for k in 0..n_matrices {
        let op = random_stiff_operator(n, 1e4, 1000 + k as u64);
        let dm = DenseMatrix::from_sparse(&op);
        let mut rng = derive_rng(2000 + k as u64, 1);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let e_oracle = dense_expm(&dm, tau).expect("n within cap").apply(&v);
        let p_oracle = dense_phi1(&dm, tau).expect("n within cap").apply(&v);
        match (expm_action(&op, &v, tau, &cfg), phi1_action(&op, &v, tau, &cfg)) {
            (Ok(e), Ok(p)) => {
                worst_expm = worst_expm.max(rel_err(&e, &e_oracle));
                worst_phi1 = worst_phi1.max(rel_err(&p, &p_oracle));
                // tau*M*phi1 + v = expm
                let mut lhs = op.matvec(&p);
                for (l, (vi, _)) in lhs.iter_mut().zip(v.iter().zip(&e)) {
                    *l = *l * tau + vi;
                }
                let resid: f64 =
                    lhs.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                worst_identity = worst_identity.max(resid / vec_norm(&e).max(vec_norm(&v)));
            }
            (e, p) => failures.push(format!(
                "matrix {k}: expm {:?} phi1 {:?}",
                e.err().map(|x| x.to_string()),
                p.err().map(|x| x.to_string())
            )),
        }
    }
    vec![
        Check::new(
            "krylov.expm_vs_dense",
            failures.is_empty() && worst_expm <= 1e-6,
            format!("worst relative error {worst_expm:.3e} over {n_matrices} stiff {n}x{n} matrices (bound 1e-6){}",
                if failures.is_empty() { String::new() } else { format!("; failures: {failures:?}") }),
        ),
        Check::new(
            "krylov.phi1_vs_dense",
            failures.is_empty() && worst_phi1 <= 1e-6,
            format!("worst relative error {worst_phi1:.3e} (bound 1e-6)"),
        ),
        Check::new(
            "krylov.functional_identity",
            worst_identity <= 1e-5,
            format!("worst residual {worst_identity:.3e} of tau*M*phi1(tau M)v + v = e^(tau M)v (bound 1e-5)"),
        ),
    ]
}

/// Noise suite: Ito isometry of nodal increments, dyadic coupling exactness,
/// cross-mode independence.
fn noise_suite() -> Vec<Check> {
    let mesh = StructuredMesh2D::new(1.0, 1.0, 16, 16).unwrap();
    let model = SpectralNoiseModel::new(0.7, 8, &mesh).unwrap();
    let mass = assemble_lumped_mass(&mesh);
    let nm = model.n_active_modes();
    let dt = 0.01;

    // exact second moment and its sampling variance from the lumped Gram matrix
    let cols: Vec<Vec<f64>> = (0..nm).map(|a| model.eig_column(a)).collect();
    let mut trace = 0.0;
    let mut fro2 = 0.0;
    for a in 0..nm {
        for b in 0..nm {
            let g =
                (model.q_values()[a] * model.q_values()[b]).sqrt() * mass.dot(&cols[a], &cols[b]);
            if a == b {
                trace += g;
            }
            fro2 += g * g;
        }
    }
    let expect = dt * trace;
    let n_draws = 10_000;
    let mut rng = derive_rng(77, 2);
    let mut acc = 0.0;
    for _ in 0..n_draws {
        let db: Vec<f64> =
            (0..nm).map(|_| dt.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
        acc += mass.norm2(&model.increment_to_nodal(&db).unwrap());
    }
    let est = acc / n_draws as f64;
    let band = 3.0 * dt * (2.0 * fro2 / n_draws as f64).sqrt();
    let isometry = Check::new(
        "noise.ito_isometry",
        (est - expect).abs() < band,
        format!("E||dW||^2 = {est:.6e} vs dt*sum q||e||^2 = {expect:.6e} (3 sigma band {band:.2e}, {n_draws} draws)"),
    );

    // coupling exactness across levels (totals aggregated dyadically)
    let path = sample_path(&model, 31, 1.0, 256).unwrap();
    let fold = |mut rows: Vec<Vec<f64>>| -> Vec<f64> {
        while rows.len() > 1 {
            rows = rows
                .chunks(2)
                .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| a + b).collect())
                .collect();
        }
        rows.pop().unwrap()
    };
    let fine_total =
        fold((0..path.n_fine()).map(|s| path.fine_increment(s).to_vec()).collect());
    let mut worst_ulp = 0u64;
    for level in 1..=8u32 {
        let steps = path.steps_at_level(level).unwrap();
        let total =
            fold((0..steps).map(|s| path.coarse_increment(level, s).unwrap()).collect());
        for k in 0..nm {
            worst_ulp = worst_ulp.max(ulp_distance(total[k], fine_total[k]));
        }
    }
    let coupling = Check::new(
        "noise.dyadic_coupling",
        worst_ulp <= 8,
        format!("coarse/fine total increments agree to {worst_ulp} ulp (bound 8)"),
    );

    // independence across modes
    let long = sample_path(&model, 33, 1.0, 8192).unwrap();
    let nchecked = nm.min(6);
    let mut worst_corr = 0.0f64;
    for a in 0..nchecked {
        for b in (a + 1)..nchecked {
            let mut acc = 0.0;
            for s in 0..long.n_fine() {
                let row = long.fine_increment(s);
                acc += row[a] * row[b];
            }
            worst_corr = worst_corr.max((acc / (long.n_fine() as f64 * long.dt_fine())).abs());
        }
    }
    let indep_band = 3.0 / (long.n_fine() as f64).sqrt();
    let independence = Check::new(
        "noise.mode_independence",
        worst_corr < indep_band,
        format!("worst empirical cross-correlation {worst_corr:.3e} (3 sigma band {indep_band:.3e})"),
    );
    vec![isometry, coupling, independence]
}

/// OU coupling suite: the empirical covariance of the increment/convolution
/// pair matches the analytic matrix for stiff and non-stiff rates.
fn ou_suite() -> Vec<Check> {
    let n = 100_000;
    let mut checks = Vec::new();
    for &mu in &[0.1f64, 1.0, 100.0] {
        for &dt in &[0.1f64, 0.01] {
            let mut rng = derive_rng(55, (mu * 10.0) as u64 * 1000 + (dt * 1000.0) as u64);
            let e = (-mu * dt).exp();
            let var_i = (1.0 - e * e) / (2.0 * mu);
            let cov = (1.0 - e) / mu;
            let (mut s_bb, mut s_bi, mut s_ii) = (0.0, 0.0, 0.0);
            for _ in 0..n {
                let db = (dt).sqrt() * rng.sample::<f64, _>(StandardNormal);
                let i = sample_coupled_pair(mu, dt, db, &mut rng).expect("valid rates");
                s_bb += db * db;
                s_bi += db * i;
                s_ii += i * i;
            }
            let nf = n as f64;
            let band2 = |v: f64| 3.0 * v * (2.0 / nf).sqrt();
            let band_c = 3.0 * ((dt * var_i + cov * cov) / nf).sqrt();
            let ok = (s_bb / nf - dt).abs() < band2(dt)
                && (s_ii / nf - var_i).abs() < band2(var_i)
                && (s_bi / nf - cov).abs() < band_c;
            checks.push(Check::new(
                &format!("ou.coupling_mu{mu}_dt{dt}"),
                ok,
                format!(
                    "var(db) {:.4e}/{:.4e}, var(I) {:.4e}/{:.4e}, cov {:.4e}/{:.4e} (3 sigma)",
                    s_bb / nf,
                    dt,
                    s_ii / nf,
                    var_i,
                    s_bi / nf,
                    cov
                ),
            ));
        }
    }
    checks
}

/// Assembly suite: exact Neumann kernel, upwind sign pattern, second-order
/// Rayleigh-quotient convergence for the lowest modes.
fn assembly_suite() -> Vec<Check> {
    use std::f64::consts::PI;
    let mut checks = Vec::new();

    let mesh = StructuredMesh2D::new(1.0, 1.0, 32, 32).unwrap();
    let mut p = SpdeProblem::example1();
    p.velocity = Some(crate::problem::VelocityField::synthetic(&mesh, 1.0, 0.5));
    let a = assemble_operator(&p, &mesh).unwrap();
    let ones = vec![1.0; mesh.n_nodes()];
    let kernel_residual = a.matvec(&ones).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    checks.push(Check::new(
        "assembly.neumann_kernel",
        kernel_residual == 0.0,
        format!("max |A_h 1| = {kernel_residual:.3e} (must be exactly 0)"),
    ));

    let mut rng = derive_rng(91, 4);
    let vel = crate::problem::VelocityField {
        qx: (0..mesh.n_nodes()).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        qy: (0..mesh.n_nodes()).map(|_| rng.gen_range(-3.0..3.0)).collect(),
    };
    let mut pr = SpdeProblem::example1();
    pr.velocity = Some(vel);
    let ar = assemble_operator(&pr, &mesh).unwrap();
    let min_off =
        ar.iter().filter(|&(r, c, _)| r != c).map(|(_, _, v)| v).fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        "assembly.upwind_sign_pattern",
        min_off >= 0.0,
        format!("smallest off-diagonal of A_h is {min_off:.3e} (must be >= 0)"),
    ));

    for &(mi, mj) in &[(1usize, 0usize), (0, 1), (1, 1)] {
        let d = 0.1;
        let exact = -d * ((mi as f64 * PI).powi(2) + (mj as f64 * PI).powi(2));
        let mut errs = Vec::new();
        for nx in [16usize, 32, 64] {
            let mesh = StructuredMesh2D::new(1.0, 1.0, nx, nx).unwrap();
            let mut p = SpdeProblem::example1();
            p.diffusion = DiffusionTensor::isotropic(d);
            let a = assemble_operator(&p, &mesh).unwrap();
            let mass = assemble_lumped_mass(&mesh);
            let v: Vec<f64> = (0..mesh.n_nodes())
                .map(|k| {
                    let [x, y] = mesh.node_xy(k);
                    (mi as f64 * PI * x).cos() * (mj as f64 * PI * y).cos()
                })
                .collect();
            let rq = mass.dot(&a.matvec(&v), &v) / mass.norm2(&v);
            errs.push((rq - exact).abs());
        }
        let r1 = (errs[0] / errs[1]).log2();
        let r2 = (errs[1] / errs[2]).log2();
        checks.push(Check::new(
            &format!("assembly.rayleigh_mode_{mi}{mj}"),
            r1 >= 1.7 && r2 >= 1.7,
            format!("observed rates {r1:.2}, {r2:.2} toward {exact:.4} (bound 1.7); errors {errs:?}"),
        ));
    }
    checks
}
