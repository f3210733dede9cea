//! Truncated Q-Wiener noise in the product-cosine eigenbasis, and dyadically
//! refinable Brownian paths so that every time-step level of a convergence
//! study consumes the same realization.
//!
//! The covariance spectrum is `q_{i,j} = (i^2 + j^2)^{-r}` over the modes
//! `0 <= i, j <= n_modes`, `i + j > 0`; the constant mode is excluded. Mode
//! fields are evaluated pointwise at the mesh nodes, which under mass lumping
//! is the projection onto the grid.

use crate::mesh::StructuredMesh2D;
use crate::rng::derive_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("decay exponent r must exceed 1/2 for trace-class noise, got {r}")]
    NotTraceClass { r: f64 },
    #[error("n_modes must be positive")]
    NoModes,
    #[error("increment vector has {got} modes, model has {want}")]
    ModeCountMismatch { got: usize, want: usize },
    #[error("n_fine must be positive")]
    EmptyPath,
    #[error("level {level} does not divide the {n_fine} fine steps dyadically")]
    MisalignedLevel { level: u32, n_fine: usize },
    #[error("coarse step {step} out of range ({n_steps} steps at this level)")]
    StepOutOfRange { step: usize, n_steps: usize },
}

/// Truncated eigenpair set of the covariance operator, with per-axis
/// eigenfunction tables evaluated at the mesh nodes.
#[derive(Debug, Clone)]
pub struct SpectralNoiseModel {
    r: f64,
    n_modes: usize,
    modes: Vec<(usize, usize)>,
    q: Vec<f64>,
    sqrt_q: Vec<f64>,
    /// `ex[i * (nx+1) + k]` = 1D eigenfunction `i` at grid column `k`.
    ex: Vec<f64>,
    ey: Vec<f64>,
    nxp: usize,
    nyp: usize,
    lx: f64,
    ly: f64,
}

fn axis_table(n_modes: usize, n_points: usize, h: f64, length: f64) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut t = Vec::with_capacity((n_modes + 1) * n_points);
    for i in 0..=n_modes {
        let norm = if i == 0 { (1.0 / length).sqrt() } else { (2.0 / length).sqrt() };
        for k in 0..n_points {
            let x = k as f64 * h;
            t.push(norm * (i as f64 * PI * x / length).cos());
        }
    }
    t
}

impl SpectralNoiseModel {
    /// Default truncation: half the cell count of the shorter axis.
    pub fn default_modes(mesh: &StructuredMesh2D) -> usize {
        (mesh.nx().min(mesh.ny()) / 2).max(1)
    }

    pub fn new(r: f64, n_modes: usize, mesh: &StructuredMesh2D) -> Result<Self, NoiseError> {
        if !(r > 0.5) {
            return Err(NoiseError::NotTraceClass { r });
        }
        if n_modes == 0 {
            return Err(NoiseError::NoModes);
        }
        let mut modes = Vec::with_capacity((n_modes + 1) * (n_modes + 1) - 1);
        let mut q = Vec::with_capacity(modes.capacity());
        for i in 0..=n_modes {
            for j in 0..=n_modes {
                if i + j == 0 {
                    continue;
                }
                modes.push((i, j));
                q.push(((i * i + j * j) as f64).powf(-r));
            }
        }
        let sqrt_q = q.iter().map(|v| v.sqrt()).collect();
        Ok(Self {
            r,
            n_modes,
            ex: axis_table(n_modes, mesh.nx() + 1, mesh.hx(), mesh.lx()),
            ey: axis_table(n_modes, mesh.ny() + 1, mesh.hy(), mesh.ly()),
            nxp: mesh.nx() + 1,
            nyp: mesh.ny() + 1,
            lx: mesh.lx(),
            ly: mesh.ly(),
            modes,
            q,
            sqrt_q,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn n_modes_per_axis(&self) -> usize {
        self.n_modes
    }

    pub fn n_active_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[(usize, usize)] {
        &self.modes
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q
    }

    pub fn q_of(&self, i: usize, j: usize) -> Option<f64> {
        self.modes.iter().position(|&m| m == (i, j)).map(|k| self.q[k])
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lx, self.ly)
    }

    /// Eigenfunction value `e_{i,j}(x_k)` for the mode at `mode_idx`.
    pub fn eig_value(&self, mode_idx: usize, node: usize) -> f64 {
        let (i, j) = self.modes[mode_idx];
        let kx = node % self.nxp;
        let ky = node / self.nxp;
        self.ex[i * self.nxp + kx] * self.ey[j * self.nyp + ky]
    }

    /// Full nodal table of one mode (column of the eigtable).
    pub fn eig_column(&self, mode_idx: usize) -> Vec<f64> {
        (0..self.nxp * self.nyp).map(|k| self.eig_value(mode_idx, k)).collect()
    }

    /// Nodal field `sum_modes sqrt(q) * e_{i,j}(x_k) * dbeta`, evaluated via
    /// the tensor-product structure of the basis.
    pub fn increment_to_nodal(&self, dbeta: &[f64]) -> Result<Vec<f64>, NoiseError> {
        if dbeta.len() != self.modes.len() {
            return Err(NoiseError::ModeCountMismatch { got: dbeta.len(), want: self.modes.len() });
        }
        // stage 1: contract over j for each (i, y-row)
        let mut partial = vec![0.0; (self.n_modes + 1) * self.nyp];
        for (m, &(i, j)) in self.modes.iter().enumerate() {
            let c = self.sqrt_q[m] * dbeta[m];
            if c == 0.0 {
                continue;
            }
            let ey_row = &self.ey[j * self.nyp..(j + 1) * self.nyp];
            let out = &mut partial[i * self.nyp..(i + 1) * self.nyp];
            for (o, e) in out.iter_mut().zip(ey_row) {
                *o += c * e;
            }
        }
        // stage 2: contract over i for each node
        let mut w = vec![0.0; self.nxp * self.nyp];
        for i in 0..=self.n_modes {
            let ex_row = &self.ex[i * self.nxp..(i + 1) * self.nxp];
            let part = &partial[i * self.nyp..(i + 1) * self.nyp];
            for ky in 0..self.nyp {
                let p = part[ky];
                if p == 0.0 {
                    continue;
                }
                let out = &mut w[ky * self.nxp..(ky + 1) * self.nxp];
                for (o, e) in out.iter_mut().zip(ex_row) {
                    *o += p * e;
                }
            }
        }
        Ok(w)
    }
}

/// Per-mode Gaussian increments on a fine dyadic grid.
///
/// Row-major `[n_fine x n_modes]`: entry `(m, k)` is the increment of mode
/// `k`'s Brownian motion over fine step `m`, distributed `N(0, dt_fine)`.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    seed: u64,
    n_fine: usize,
    dt_fine: f64,
    n_modes: usize,
    inc: Vec<f64>,
}

/// Draw a path. Deterministic in `(model shape, seed, t_final, n_fine)`.
pub fn sample_path(
    model: &SpectralNoiseModel,
    seed: u64,
    t_final: f64,
    n_fine: usize,
) -> Result<BrownianPath, NoiseError> {
    if n_fine == 0 {
        return Err(NoiseError::EmptyPath);
    }
    let n_modes = model.n_active_modes();
    let dt_fine = t_final / n_fine as f64;
    let sd = dt_fine.sqrt();
    let mut rng = derive_rng(seed, 0x5745_4E52); // fixed stream id for paths
    let inc = (0..n_fine * n_modes)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(BrownianPath { seed, n_fine, dt_fine, n_modes, inc })
}

impl BrownianPath {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    pub fn dt_fine(&self) -> f64 {
        self.dt_fine
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn fine_increment(&self, step: usize) -> &[f64] {
        &self.inc[step * self.n_modes..(step + 1) * self.n_modes]
    }

    /// Number of coarse steps at a dyadic level (`level = 0` is the fine grid).
    pub fn steps_at_level(&self, level: u32) -> Result<usize, NoiseError> {
        let chunk = 1usize
            .checked_shl(level)
            .filter(|c| self.n_fine % c == 0 && *c <= self.n_fine)
            .ok_or(NoiseError::MisalignedLevel { level, n_fine: self.n_fine })?;
        Ok(self.n_fine / chunk)
    }

    /// Exact floating-point sum of the `2^level` child increments per mode.
    ///
    /// Children are combined pairwise along the dyadic tree
    /// `S(L, s) = S(L-1, 2s) + S(L-1, 2s+1)`, so a coarse increment equals
    /// the sum of its two children at the next finer level bit-exactly, at
    /// every level.
    pub fn coarse_increment(&self, level: u32, step: usize) -> Result<Vec<f64>, NoiseError> {
        let n_steps = self.steps_at_level(level)?;
        if step >= n_steps {
            return Err(NoiseError::StepOutOfRange { step, n_steps });
        }
        let chunk = self.n_fine / n_steps;
        let nm = self.n_modes;
        let mut buf = self.inc[step * chunk * nm..(step + 1) * chunk * nm].to_vec();
        let mut width = chunk;
        while width > 1 {
            width /= 2;
            for i in 0..width {
                for k in 0..nm {
                    buf[i * nm + k] = buf[2 * i * nm + k] + buf[(2 * i + 1) * nm + k];
                }
            }
        }
        buf.truncate(nm);
        Ok(buf)
    }

    /// FNV-1a over the raw increment bytes; used to assert that every scheme
    /// in a study consumed the same realization.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.inc {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}

/// Distance between two floats in units in the last place.
pub fn ulp_distance(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    if a.is_nan() || b.is_nan() {
        return u64::MAX;
    }
    // map to a monotone integer line (two's-complement style)
    fn key(x: f64) -> i64 {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN.wrapping_sub(bits).wrapping_neg() ^ i64::MIN
        } else {
            bits
        }
    }
    let (ka, kb) = (key(a), key(b));
    ka.abs_diff(kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_lumped_mass;
    use approx::assert_relative_eq;

    fn mesh() -> StructuredMesh2D {
        StructuredMesh2D::new(1.0, 1.0, 8, 8).unwrap()
    }

    #[test]
    fn spectrum_values() {
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 4, &m).unwrap();
        assert_eq!(model.q_of(1, 0), Some(1.0));
        assert_eq!(model.q_of(0, 1), Some(1.0));
        assert_relative_eq!(model.q_of(1, 1).unwrap(), 2f64.powf(-0.7), epsilon = 1e-15);
        assert_relative_eq!(model.q_of(1, 1).unwrap(), 0.61557, epsilon = 1e-5);
        assert_eq!(model.q_of(0, 0), None);
        assert_eq!(model.n_active_modes(), 5 * 5 - 1);
    }

    #[test]
    fn rejects_non_trace_class() {
        let m = mesh();
        assert!(SpectralNoiseModel::new(0.5, 4, &m).is_err());
        assert!(SpectralNoiseModel::new(0.2, 4, &m).is_err());
        assert!(SpectralNoiseModel::new(0.7, 0, &m).is_err());
    }

    #[test]
    fn spectrum_monotone_and_positive() {
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 4, &m).unwrap();
        for (k, &(i, j)) in model.modes().iter().enumerate() {
            assert!(model.q_values()[k] > 0.0);
            if let Some(qn) = model.q_of(i + 1, j) {
                assert!(qn <= model.q_values()[k]);
            }
            if let Some(qn) = model.q_of(i, j + 1) {
                assert!(qn <= model.q_values()[k]);
            }
        }
    }

    #[test]
    fn discrete_orthonormality_of_low_modes() {
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 3, &m).unwrap();
        let mass = assemble_lumped_mass(&m);
        for a in 0..model.n_active_modes() {
            let ea = model.eig_column(a);
            for b in a..model.n_active_modes() {
                let eb = model.eig_column(b);
                let ip = mass.dot(&ea, &eb);
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-10, "modes {a},{b}: {ip}");
            }
        }
    }

    #[test]
    fn paths_are_deterministic() {
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 2, &m).unwrap();
        let p1 = sample_path(&model, 99, 1.0, 16).unwrap();
        let p2 = sample_path(&model, 99, 1.0, 16).unwrap();
        assert_eq!(p1.inc, p2.inc);
        assert_eq!(p1.checksum(), p2.checksum());
        let p3 = sample_path(&model, 100, 1.0, 16).unwrap();
        assert_ne!(p1.inc, p3.inc);
    }

    #[test]
    fn single_step_variance() {
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 3, &m).unwrap();
        let nm = model.n_active_modes();
        let t_final = 0.01;
        let n = 100_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for s in 0..n {
            let p = sample_path(&model, s as u64, t_final, 1).unwrap();
            let v = p.fine_increment(0)[s % nm];
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / n as f64;
        let var = acc2 / n as f64 - mean * mean;
        // 3 sigma band for the sample variance of N(0, dt): sd ~ dt sqrt(2/n)
        let band = 3.0 * t_final * (2.0 / n as f64).sqrt();
        assert!((var - t_final).abs() < band, "var {var} vs {t_final} +- {band}");
    }

    #[test]
    fn coarse_increment_levels() {
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 2, &m).unwrap();
        let p = sample_path(&model, 1, 1.0, 8).unwrap();
        let nm = model.n_active_modes();
        // level 0 is the fine increment itself
        assert_eq!(p.coarse_increment(0, 3).unwrap(), p.fine_increment(3));
        // level 1 sums pairs
        let c = p.coarse_increment(1, 0).unwrap();
        for k in 0..nm {
            assert_eq!(c[k], p.fine_increment(0)[k] + p.fine_increment(1)[k]);
        }
        assert!(p.coarse_increment(4, 0).is_err()); // 2^4 = 16 > 8
        assert!(p.coarse_increment(1, 4).is_err());
        assert!(matches!(
            p.coarse_increment(2, 0),
            Ok(_)
        ));
    }

    /// Dyadic pairwise fold of per-mode rows down to a single total.
    fn fold_to_total(mut rows: Vec<Vec<f64>>) -> Vec<f64> {
        while rows.len() > 1 {
            rows = rows
                .chunks(2)
                .map(|pair| {
                    pair[0].iter().zip(&pair[1]).map(|(a, b)| a + b).collect()
                })
                .collect();
        }
        rows.pop().unwrap()
    }

    #[test]
    fn coarse_totals_match_fine_totals_to_8_ulp() {
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 3, &m).unwrap();
        let p = sample_path(&model, 5, 1.0, 64).unwrap();
        let nm = model.n_active_modes();
        let fine_total =
            fold_to_total((0..64).map(|s| p.fine_increment(s).to_vec()).collect());
        for level in [1u32, 2, 3, 6] {
            let steps = p.steps_at_level(level).unwrap();
            let total = fold_to_total(
                (0..steps).map(|s| p.coarse_increment(level, s).unwrap()).collect(),
            );
            for k in 0..nm {
                assert!(
                    ulp_distance(total[k], fine_total[k]) <= 8,
                    "level {level} mode {k}: {} vs {}",
                    total[k],
                    fine_total[k]
                );
            }
        }
    }

    #[test]
    fn coarse_step_equals_sum_of_children_exactly() {
        // the per-coarse-step coupling invariant, at every nesting depth
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 3, &m).unwrap();
        let p = sample_path(&model, 12, 1.0, 32).unwrap();
        for level in 1..=5u32 {
            let steps = p.steps_at_level(level).unwrap();
            for s in 0..steps {
                let coarse = p.coarse_increment(level, s).unwrap();
                let left = p.coarse_increment(level - 1, 2 * s).unwrap();
                let right = p.coarse_increment(level - 1, 2 * s + 1).unwrap();
                for k in 0..coarse.len() {
                    assert_eq!(coarse[k], left[k] + right[k], "level {level} step {s}");
                }
            }
        }
    }

    #[test]
    fn increment_to_nodal_basics() {
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 3, &m).unwrap();
        let nm = model.n_active_modes();
        let zero = model.increment_to_nodal(&vec![0.0; nm]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(model.increment_to_nodal(&vec![0.0; nm + 1]).is_err());

        // single active mode (1,0) with unit increment
        let idx = model.modes().iter().position(|&ij| ij == (1, 0)).unwrap();
        let mut db = vec![0.0; nm];
        db[idx] = 1.0;
        let w = model.increment_to_nodal(&db).unwrap();
        let sq = model.q_of(1, 0).unwrap().sqrt();
        for k in 0..m.n_nodes() {
            let [x, _] = m.node_xy(k);
            let expected = sq * 2f64.sqrt() * (std::f64::consts::PI * x).cos();
            assert_relative_eq!(w[k], expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn ito_isometry_monte_carlo() {
        // E ||dW||^2 = dt * sum q ||e||^2 with exact per-draw variance bound
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 4, &m).unwrap();
        let mass = assemble_lumped_mass(&m);
        let nm = model.n_active_modes();
        let dt = 0.01;
        // Gram matrix of sqrt(q_a) e_a under the lumped product
        let cols: Vec<Vec<f64>> = (0..nm).map(|a| model.eig_column(a)).collect();
        let mut trace = 0.0;
        let mut fro2 = 0.0;
        for a in 0..nm {
            for b in 0..nm {
                let g = (model.q_values()[a] * model.q_values()[b]).sqrt()
                    * mass.dot(&cols[a], &cols[b]);
                if a == b {
                    trace += g;
                }
                fro2 += g * g;
            }
        }
        let expect = dt * trace;
        let n_draws = 10_000;
        let mut acc = 0.0;
        let mut rng = crate::rng::derive_rng(2024, 7);
        for _ in 0..n_draws {
            let db: Vec<f64> =
                (0..nm).map(|_| dt.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            let w = model.increment_to_nodal(&db).unwrap();
            acc += mass.norm2(&w);
        }
        let est = acc / n_draws as f64;
        // Var(||dW||^2) = 2 dt^2 ||Gram||_F^2
        let band = 3.0 * dt * (2.0 * fro2 / n_draws as f64).sqrt();
        assert!((est - expect).abs() < band, "est {est} vs {expect} +- {band}");
    }

    #[test]
    fn cross_mode_independence() {
        let m = mesh();
        let model = SpectralNoiseModel::new(0.7, 2, &m).unwrap();
        let p = sample_path(&model, 11, 1.0, 4096).unwrap();
        let nm = model.n_active_modes();
        let n = p.n_fine() as f64;
        let dt = p.dt_fine();
        for a in 0..nm.min(4) {
            for b in (a + 1)..nm.min(4) {
                let mut acc = 0.0;
                for s in 0..p.n_fine() {
                    let row = p.fine_increment(s);
                    acc += row[a] * row[b];
                }
                let corr = acc / (n * dt);
                assert!(corr.abs() < 3.0 / n.sqrt(), "modes {a},{b}: corr {corr}");
            }
        }
    }

    #[test]
    fn ulp_distance_sanity() {
        assert_eq!(ulp_distance(1.0, 1.0), 0);
        assert_eq!(ulp_distance(1.0, f64::from_bits(1.0f64.to_bits() + 1)), 1);
        assert_eq!(ulp_distance(-1.0, f64::from_bits((-1.0f64).to_bits() + 1)), 1);
        assert!(ulp_distance(1.0, 2.0) > 1_000_000);
        assert_eq!(ulp_distance(0.0, -0.0), 0);
    }
}
