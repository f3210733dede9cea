//! Arnoldi-projected actions of the matrix exponential and of phi1.
//!
//! The subspace dimension is kept small and fixed (default 10). When the
//! a-posteriori error estimate fails the tolerance at that dimension, the
//! step is split in half recursively (semigroup composition) instead of
//! growing the subspace. phi1 actions reuse the exponential machinery on an
//! augmented operator, so sub-stepping works identically for both.

use crate::dense::{expm_unchecked, DenseMatrix};
use crate::sparse::SparseOperator;
use crate::vecops::{all_finite, axpy, dot, norm2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KrylovError {
    #[error("vector length {got} does not match operator dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("tau must be finite and nonnegative, got {tau}")]
    InvalidTau { tau: f64 },
    #[error("input vector contains non-finite entries")]
    NonFiniteInput,
    #[error(
        "no convergence: error estimate {estimate:.3e} above tolerance {tol:.3e} \
         after {depth} halvings"
    )]
    NoConvergence { depth: u32, estimate: f64, tol: f64 },
}

/// Parameters of the Krylov projection.
#[derive(Debug, Clone)]
pub struct KrylovConfig {
    /// Subspace dimension cap.
    pub m_max: usize,
    /// Target accuracy, relative to `max(result norm, input norm)`.
    pub tol: f64,
    /// Happy-breakdown threshold on the next subdiagonal entry.
    pub breakdown_eps: f64,
    /// Maximum recursive step-halving depth before reporting failure.
    pub max_split_depth: u32,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { m_max: 10, tol: 1e-6, breakdown_eps: 1e-12, max_split_depth: 20 }
    }
}

struct Arnoldi {
    /// Orthonormal basis vectors, `k` of them.
    basis: Vec<Vec<f64>>,
    /// Upper-Hessenberg projection, `(m_max+1) x m_max` packed row-major;
    /// only the leading `(k+1) x k` block is meaningful.
    h: Vec<f64>,
    k: usize,
    /// Subdiagonal entry `h_{k+1,k}`; zero on happy breakdown.
    h_next: f64,
    breakdown: bool,
}

fn arnoldi(op: &SparseOperator, v_unit: &[f64], m_max: usize, breakdown_eps: f64) -> Arnoldi {
    let n = op.n();
    let mut basis = vec![v_unit.to_vec()];
    let mut h = vec![0.0; (m_max + 1) * m_max];
    let mut w = vec![0.0; n];
    let mut k = 0;
    let mut h_next = 0.0;
    let mut breakdown = false;
    for j in 0..m_max {
        op.apply(&basis[j], &mut w);
        // modified Gram-Schmidt with one re-orthogonalization pass
        for pass in 0..2 {
            for (i, vi) in basis.iter().enumerate() {
                let c = dot(vi, &w);
                axpy(-c, vi, &mut w);
                if pass == 0 {
                    h[i * m_max + j] = c;
                } else {
                    h[i * m_max + j] += c;
                }
            }
        }
        let hj = norm2(&w);
        k = j + 1;
        let scale = (0..=j).map(|i| h[i * m_max + j].abs()).fold(hj, f64::max);
        if hj <= breakdown_eps * scale.max(f64::MIN_POSITIVE) {
            h_next = 0.0;
            breakdown = true;
            break;
        }
        h[(j + 1) * m_max + j] = hj;
        h_next = hj;
        if j + 1 < m_max {
            let mut v = w.clone();
            v.iter_mut().for_each(|x| *x /= hj);
            basis.push(v);
        }
    }
    Arnoldi { basis, h, k, h_next, breakdown }
}

/// One projected exponential: returns `(w, error_estimate)` where
/// `w ~ beta * V_k e^{tau H_k} e_1`.
///
/// The estimate is the classical residual term
/// `beta * h_{k+1,k} * |[integral of e^{sH}]_{k,1}|`, obtained from the
/// exponential of the Hessenberg block extended by one row.
fn projected_exp(op: &SparseOperator, v: &[f64], beta: f64, tau: f64, cfg: &KrylovConfig) -> (Vec<f64>, f64) {
    let m = cfg.m_max;
    let v_unit: Vec<f64> = v.iter().map(|x| x / beta).collect();
    let a = arnoldi(op, &v_unit, m, cfg.breakdown_eps);
    let k = a.k;
    // (k+1)-dimensional extension: top-left block H, one error row below.
    let he = DenseMatrix::from_fn(k + 1, |i, j| {
        if i < k && j < k {
            a.h[i * m + j]
        } else if i == k && j == k - 1 {
            a.h_next
        } else {
            0.0
        }
    });
    let e = expm_unchecked(&he, tau);
    let mut w = vec![0.0; op.n()];
    for (j, bj) in a.basis.iter().enumerate().take(k) {
        axpy(beta * e.get(j, 0), bj, &mut w);
    }
    let err = if a.breakdown { 0.0 } else { beta * e.get(k, 0).abs() };
    (w, err)
}

fn expm_rec(
    op: &SparseOperator,
    v: &[f64],
    tau: f64,
    tol: f64,
    depth: u32,
    cfg: &KrylovConfig,
) -> Result<Vec<f64>, KrylovError> {
    let beta = norm2(v);
    if beta == 0.0 || tau == 0.0 {
        return Ok(v.to_vec());
    }
    let (w, err) = projected_exp(op, v, beta, tau, cfg);
    let gauge = norm2(&w).max(beta);
    if err <= tol * gauge {
        return Ok(w);
    }
    if depth >= cfg.max_split_depth {
        return Err(KrylovError::NoConvergence { depth, estimate: err, tol: tol * gauge });
    }
    let half = expm_rec(op, v, 0.5 * tau, 0.5 * tol, depth + 1, cfg)?;
    expm_rec(op, &half, 0.5 * tau, 0.5 * tol, depth + 1, cfg)
}

fn check_input(op: &SparseOperator, v: &[f64], tau: f64) -> Result<(), KrylovError> {
    if v.len() != op.n() {
        return Err(KrylovError::DimensionMismatch { got: v.len(), want: op.n() });
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(KrylovError::InvalidTau { tau });
    }
    if !all_finite(v) {
        return Err(KrylovError::NonFiniteInput);
    }
    Ok(())
}

/// `w ~ e^{tau M} v`.
pub fn expm_action(
    m: &SparseOperator,
    v: &[f64],
    tau: f64,
    cfg: &KrylovConfig,
) -> Result<Vec<f64>, KrylovError> {
    check_input(m, v, tau)?;
    if tau == 0.0 {
        return Ok(v.to_vec());
    }
    expm_rec(m, v, tau, cfg.tol, 0, cfg)
}

/// `w ~ phi1(tau M) v` with `phi1(z) = (e^z - 1)/z`, `phi1(0) = 1`.
///
/// Realized through the exponential of the `(n+1)`-dimensional augmented
/// operator `[[M, v/(tau*beta)], [0, 0]]` acting on the last unit vector:
/// its top block equals `phi1(tau M) v / beta`. The column scaling keeps the
/// augmented state O(1), so the error control of [`expm_action`] carries
/// over without amplification by `1/tau`.
pub fn phi1_action(
    m: &SparseOperator,
    v: &[f64],
    tau: f64,
    cfg: &KrylovConfig,
) -> Result<Vec<f64>, KrylovError> {
    check_input(m, v, tau)?;
    if tau == 0.0 {
        return Ok(v.to_vec());
    }
    let n = m.n();
    let beta = norm2(v);
    if beta == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let col_scale = 1.0 / (tau * beta);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n + 1);
    for r in 0..n {
        let (cols, vals) = m.row(r);
        let mut row: Vec<(usize, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
        if v[r] != 0.0 {
            row.push((n, v[r] * col_scale));
        }
        rows.push(row);
    }
    rows.push(Vec::new());
    let aug = SparseOperator::from_rows(n + 1, rows).expect("augmented operator is well-formed");
    let mut e_last = vec![0.0; n + 1];
    e_last[n] = 1.0;
    let w = expm_rec(&aug, &e_last, tau, cfg.tol, 0, cfg)?;
    Ok(w[..n].iter().map(|x| x * beta).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{dense_expm, dense_phi1};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, seed: u64, stiffness: f64) -> SparseOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        for r in 0..n {
            // log-spaced stable diagonal plus a few random couplings
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
        SparseOperator::from_rows(n, rows).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_matrix_gives_identity_action() {
        let z = SparseOperator::from_rows(4, vec![vec![]; 4]).unwrap();
        let v = vec![1.0, -2.0, 3.0, 0.5];
        let w = expm_action(&z, &v, 2.5, &KrylovConfig::default()).unwrap();
        assert_eq!(w, v);
    }

    #[test]
    fn diagonal_exponential() {
        let m = SparseOperator::from_diag(&[-1.0, -2.0]);
        let w = expm_action(&m, &[1.0, 1.0], 1.0, &KrylovConfig::default()).unwrap();
        assert_relative_eq!(w[0], (-1.0f64).exp(), max_relative = 1e-10);
        assert_relative_eq!(w[1], (-2.0f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn tau_zero_is_exact_identity() {
        let m = random_sparse(30, 1, 100.0);
        let v = random_vec(30, 2);
        assert_eq!(expm_action(&m, &v, 0.0, &KrylovConfig::default()).unwrap(), v);
        assert_eq!(phi1_action(&m, &v, 0.0, &KrylovConfig::default()).unwrap(), v);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = SparseOperator::from_diag(&[-1.0, -2.0]);
        assert!(matches!(
            expm_action(&m, &[1.0], 1.0, &KrylovConfig::default()),
            Err(KrylovError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            expm_action(&m, &[1.0, 2.0], f64::NAN, &KrylovConfig::default()),
            Err(KrylovError::InvalidTau { .. })
        ));
        assert!(matches!(
            expm_action(&m, &[f64::NAN, 2.0], 1.0, &KrylovConfig::default()),
            Err(KrylovError::NonFiniteInput)
        ));
    }

    #[test]
    fn scalar_phi1() {
        let m = SparseOperator::from_diag(&[-2.0]);
        let w = phi1_action(&m, &[1.0], 1.0, &KrylovConfig::default()).unwrap();
        assert_relative_eq!(w[0], (1.0 - (-2.0f64).exp()) / 2.0, max_relative = 1e-10);
    }

    #[test]
    fn matches_dense_oracle_on_stiff_matrix() {
        let cfg = KrylovConfig::default();
        let m = random_sparse(100, 42, 1e4);
        let v = random_vec(100, 43);
        let tau = 0.1;
        let w = expm_action(&m, &v, tau, &cfg).unwrap();
        let dense = dense_expm(&DenseMatrix::from_sparse(&m), tau).unwrap().apply(&v);
        let err = w
            .iter()
            .zip(&dense)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-6 * norm2(&dense).max(norm2(&v)), "err {err}");
    }

    #[test]
    fn phi1_functional_identity() {
        // tau*M*phi1 + v = expm within 10x tol
        let cfg = KrylovConfig::default();
        let m = random_sparse(100, 7, 1e3);
        let v = random_vec(100, 8);
        let tau = 0.05;
        let p = phi1_action(&m, &v, tau, &cfg).unwrap();
        let e = expm_action(&m, &v, tau, &cfg).unwrap();
        let mut lhs = m.matvec(&p);
        lhs.iter_mut().for_each(|x| *x *= tau);
        for (l, vi) in lhs.iter_mut().zip(&v) {
            *l += vi;
        }
        let resid = lhs
            .iter()
            .zip(&e)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(resid <= 10.0 * cfg.tol * norm2(&e).max(norm2(&v)), "resid {resid}");
    }

    #[test]
    fn phi1_matches_dense_oracle() {
        let cfg = KrylovConfig::default();
        let m = random_sparse(50, 11, 1e2);
        let dm = DenseMatrix::from_sparse(&m);
        let v = random_vec(50, 12);
        let tau = 0.2;
        let w = phi1_action(&m, &v, tau, &cfg).unwrap();
        let oracle = dense_phi1(&dm, tau).unwrap().apply(&v);
        let err = w
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-6 * norm2(&oracle).max(norm2(&v)), "err {err}");
    }

    #[test]
    fn semigroup_property() {
        let cfg = KrylovConfig::default();
        let m = random_sparse(60, 3, 50.0);
        let v = random_vec(60, 4);
        let tau = 0.07;
        let two_step =
            expm_action(&m, &expm_action(&m, &v, tau, &cfg).unwrap(), tau, &cfg).unwrap();
        let one_step = expm_action(&m, &v, 2.0 * tau, &cfg).unwrap();
        let err = two_step
            .iter()
            .zip(&one_step)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 4.0 * cfg.tol * norm2(&one_step).max(norm2(&v)), "err {err}");
    }

    #[test]
    fn linearity() {
        let cfg = KrylovConfig::default();
        let m = random_sparse(40, 5, 50.0);
        let u = random_vec(40, 6);
        let v = random_vec(40, 7);
        let (alpha, beta) = (0.3, -1.7);
        let comb: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let tau = 0.11;
        let w_comb = expm_action(&m, &comb, tau, &cfg).unwrap();
        let wu = expm_action(&m, &u, tau, &cfg).unwrap();
        let wv = expm_action(&m, &v, tau, &cfg).unwrap();
        let err = w_comb
            .iter()
            .zip(wu.iter().zip(&wv))
            .map(|(c, (a, b))| (c - (alpha * a + beta * b)).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 10.0 * cfg.tol * norm2(&comb).max(1.0), "err {err}");
    }

    #[test]
    fn happy_breakdown_is_exact() {
        // v spans a 2-dimensional invariant subspace of a block-diagonal M
        let mut rows = vec![vec![]; 20];
        rows[0] = vec![(0, -1.0), (1, 0.5)];
        rows[1] = vec![(0, 0.25), (1, -2.0)];
        for (r, row) in rows.iter_mut().enumerate().skip(2) {
            *row = vec![(r, -3.0 - r as f64)];
        }
        let m = SparseOperator::from_rows(20, rows).unwrap();
        let mut v = vec![0.0; 20];
        v[0] = 1.0;
        v[1] = -2.0;
        let w = expm_action(&m, &v, 1.0, &KrylovConfig::default()).unwrap();
        let dense = dense_expm(&DenseMatrix::from_sparse(&m), 1.0).unwrap().apply(&v);
        for (a, b) in w.iter().zip(&dense) {
            assert_relative_eq!(a, b, epsilon = 1e-12, max_relative = 1e-12);
        }
        assert!(w[2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn substepping_handles_large_tau() {
        let cfg = KrylovConfig::default();
        let m = random_sparse(40, 9, 1e3);
        let v = random_vec(40, 10);
        // tau*||M|| is far beyond what a 10-dim subspace resolves in one shot
        let tau = 2.0;
        let w = expm_action(&m, &v, tau, &cfg).unwrap();
        let dense = dense_expm(&DenseMatrix::from_sparse(&m), tau).unwrap().apply(&v);
        let err = w
            .iter()
            .zip(&dense)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-5 * norm2(&dense).max(norm2(&v)), "err {err}");
    }

    #[test]
    fn depth_limit_reports_failure() {
        let cfg = KrylovConfig { max_split_depth: 0, m_max: 2, ..Default::default() };
        let m = random_sparse(50, 13, 1e4);
        let v = random_vec(50, 14);
        assert!(matches!(
            expm_action(&m, &v, 1.0, &cfg),
            Err(KrylovError::NoConvergence { .. })
        ));
    }
}
