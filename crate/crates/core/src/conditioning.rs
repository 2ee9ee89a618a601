//! Exact Gaussian conditioning on past observations.
//!
//! Pinning the process at `T_1 < … < T_n` updates the covariance one pin at a
//! time:
//!
//! ```text
//! α_j(t)   = k_{j-1}(t, T_j) / k_{j-1}(T_j, T_j)
//! k_j(t,s) = k_{j-1}(t,s) - α_j(t) k_{j-1}(s, T_j)
//! ```
//!
//! with `k_0 = k`. The recursion is the fast path; the Schur complement
//! `K_gg - K_gT K_TT^{-1} K_Tg` on an explicit grid is kept as an independent
//! oracle and is authoritative in disputes. Without memoization the recursion
//! is exponential in `n`, so construction eagerly builds the triangular table
//! of pin-to-pin values `k_{i-1}(T_j, T_i)` and the pivots `k_{j-1}(T_j,T_j)`;
//! evaluation is then O(n²) per point.

use crate::dd::Dd;
use crate::kernels::KernelSpec;
use crate::linalg::PackedCholesky;
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Relative pivot tolerance below which conditioning is reported degenerate.
pub const DEGENERACY_TOL: f64 = 1e-14;

/// Ordered past pins `(T_j, x_j)`, `0 < T_1 < … < T_n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observations {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Observations {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "{} observation times but {} values",
                times.len(),
                values.len()
            )));
        }
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "observation times must be finite and positive, got {t}"
                )));
            }
            if i > 0 && t <= times[i - 1] {
                return Err(Error::InvalidParameter(
                    "observation times must be strictly increasing".into(),
                ));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "observation values must be finite".into(),
            ));
        }
        Ok(Observations { times, values })
    }

    pub fn empty() -> Self {
        Observations::default()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    pub fn last_value(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// The n-fold conditioned covariance with its memoized recursion tables.
///
/// Immutable after construction and cheap to share across workers.
#[derive(Debug, Clone)]
pub struct ConditionedKernel {
    spec: KernelSpec,
    obs: Observations,
    /// `u_table[j-1][i-1] = k_{i-1}(T_j, T_i)` for `i <= j`.
    u_table: Vec<Vec<f64>>,
    /// `pivots[j-1] = k_{j-1}(T_j, T_j)`.
    pivots: Vec<f64>,
    /// Mean-recursion factors `w_j = E[X^{j-1}_{T_j}] - x_j`.
    mean_factors: Vec<f64>,
}

impl ConditionedKernel {
    pub fn new(spec: KernelSpec, obs: Observations) -> Result<Self> {
        spec.validate()?;
        let n = obs.len();
        let mut u_table: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut pivots = Vec::with_capacity(n);
        for j in 1..=n {
            let tj = obs.times[j - 1];
            let mut col = Vec::with_capacity(j);
            for i in 1..=j {
                let ti = obs.times[i - 1];
                let mut v = spec.eval_cov(tj, ti)?;
                for l in 1..i {
                    // u_l(T_i): already in the table for i < j, else in `col`
                    let u_l_ti = if i == j {
                        col[l - 1]
                    } else {
                        u_table[i - 1][l - 1]
                    };
                    v -= col[l - 1] * u_l_ti / pivots[l - 1];
                }
                col.push(v);
            }
            let pivot = col[j - 1];
            let base = spec.eval_cov(tj, tj)?;
            if pivot <= DEGENERACY_TOL * base {
                return Err(Error::DegenerateConditioning(format!(
                    "pivot k_{}({tj},{tj}) = {pivot:.3e} below tolerance",
                    j - 1
                )));
            }
            pivots.push(pivot);
            u_table.push(col);
        }
        let mut mean_factors = Vec::with_capacity(n);
        for j in 1..=n {
            let mut m = 0.0;
            for i in 1..j {
                m -= u_table[j - 1][i - 1] * mean_factors[i - 1] / pivots[i - 1];
            }
            mean_factors.push(m - obs.values[j - 1]);
        }
        Ok(ConditionedKernel {
            spec,
            obs,
            u_table,
            pivots,
            mean_factors,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn obs(&self) -> &Observations {
        &self.obs
    }

    /// `k_{j-1}(T_j, T_j)`, 1-based `j`.
    pub fn pivot(&self, j: usize) -> f64 {
        self.pivots[j - 1]
    }

    /// The vector `u_j(t) = k_{j-1}(t, T_j)` for `j = 1..=n`.
    fn u_vector(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.obs.len();
        let mut u = Vec::with_capacity(n);
        for j in 1..=n {
            let mut v = self.spec.eval_cov(t, self.obs.times[j - 1])?;
            for i in 1..j {
                v -= u[i - 1] * self.u_table[j - 1][i - 1] / self.pivots[i - 1];
            }
            u.push(v);
        }
        Ok(u)
    }

    /// `α_j(t) = k_{j-1}(t, T_j) / k_{j-1}(T_j, T_j)`, 1-based `j`.
    pub fn alpha_j(&self, j: usize, t: f64) -> Result<f64> {
        if j == 0 || j > self.obs.len() {
            return Err(Error::InvalidParameter(format!(
                "pin index {j} outside 1..={}",
                self.obs.len()
            )));
        }
        Ok(self.u_vector(t)?[j - 1] / self.pivots[j - 1])
    }

    /// Fully conditioned covariance `k_n(t, s)`.
    pub fn cond_cov(&self, t: f64, s: f64) -> Result<f64> {
        let ut = self.u_vector(t)?;
        let us = self.u_vector(s)?;
        let mut v = self.spec.eval_cov(t, s)?;
        for ((a, b), p) in ut.iter().zip(&us).zip(&self.pivots) {
            v -= a * b / p;
        }
        Ok(v)
    }

    /// Conditional mean at `t`, by iterating the pin-update recursion.
    pub fn cond_mean_at(&self, t: f64) -> Result<f64> {
        let ut = self.u_vector(t)?;
        let mut m = 0.0;
        for ((u, w), p) in ut.iter().zip(&self.mean_factors).zip(&self.pivots) {
            m -= u * w / p;
        }
        Ok(m)
    }
}

/// Schur-complement conditional covariance on an explicit grid:
/// `K_gg - K_gT K_TT^{-1} K_Tg`, with `K_TT` factored symmetrically (jitter
/// ladder on failure). Serves as the independent oracle for the recursion.
pub fn cond_cov_matrix(
    spec: &KernelSpec,
    obs: &Observations,
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let g = grid.len();
    let n = obs.len();
    let mut out = DMatrix::zeros(g, g);
    for a in 0..g {
        for b in 0..g {
            out[(a, b)] = spec.eval_cov(grid[a], grid[b])?;
        }
    }
    if n == 0 {
        return Ok(out);
    }
    let factor = pin_factor(spec, obs)?;
    // X[:, a] = K_TT^{-1} K_{T, g_a}
    let mut x_cols: Vec<Vec<f64>> = Vec::with_capacity(g);
    let mut k_tg: Vec<Vec<f64>> = Vec::with_capacity(g);
    for &ga in grid {
        let col: Vec<f64> = obs
            .times()
            .iter()
            .map(|&tj| spec.eval_cov(tj, ga))
            .collect::<Result<_>>()?;
        let mut solved = col.clone();
        factor.solve(&mut solved);
        k_tg.push(col);
        x_cols.push(solved);
    }
    for a in 0..g {
        for b in 0..g {
            let dot: f64 = (0..n).map(|j| k_tg[a][j] * x_cols[b][j]).sum();
            out[(a, b)] -= dot;
        }
    }
    Ok(out)
}

/// Conditional mean on a grid, computed both by the pin-update recursion and
/// as `K_gT K_TT^{-1} x`; the two routes must agree to 1e-10.
pub fn cond_mean(spec: &KernelSpec, obs: &Observations, grid: &[f64]) -> Result<Vec<f64>> {
    if obs.is_empty() {
        return Err(Error::InvalidParameter(
            "conditional mean requires at least one observation".into(),
        ));
    }
    let ck = ConditionedKernel::new(*spec, obs.clone())?;
    let recursive: Vec<f64> = grid
        .iter()
        .map(|&t| ck.cond_mean_at(t))
        .collect::<Result<_>>()?;

    let factor = pin_factor(spec, obs)?;
    let mut weights = obs.values().to_vec();
    factor.solve(&mut weights);
    let scale = 1.0 + obs.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut schur = Vec::with_capacity(grid.len());
    for (idx, &t) in grid.iter().enumerate() {
        let mut m = 0.0;
        for (j, &tj) in obs.times().iter().enumerate() {
            m += spec.eval_cov(t, tj)? * weights[j];
        }
        if (m - recursive[idx]).abs() > 1e-10 * scale {
            return Err(Error::Numeric(format!(
                "conditional-mean routes disagree at t={t}: recursion {} vs matrix {m}",
                recursive[idx]
            )));
        }
        schur.push(m);
    }
    Ok(schur)
}

fn pin_factor(spec: &KernelSpec, obs: &Observations) -> Result<PackedCholesky> {
    let n = obs.len();
    let mut k_tt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k_tt[i * n + j] = spec.eval_cov(obs.times()[i], obs.times()[j])?;
        }
    }
    PackedCholesky::factor(&k_tt, n)
}

/// Double-double mirror of the conditioning recursion, for oracle use where
/// the conditioned covariance is an `O(ε²)` difference of `O(1)` kernel
/// values. Tables are rebuilt per instance; `n` is small in that setting.
pub(crate) struct DdConditioner {
    spec: KernelSpec,
    times: Vec<Dd>,
    u_table: Vec<Vec<Dd>>,
    pivots: Vec<Dd>,
}

impl DdConditioner {
    pub fn new(spec: KernelSpec, obs: &Observations) -> Result<Self> {
        let times: Vec<Dd> = obs.times().iter().map(|&t| Dd::from(t)).collect();
        let n = times.len();
        let mut u_table: Vec<Vec<Dd>> = Vec::with_capacity(n);
        let mut pivots: Vec<Dd> = Vec::with_capacity(n);
        for j in 1..=n {
            let mut col: Vec<Dd> = Vec::with_capacity(j);
            for i in 1..=j {
                let mut v = spec.eval_cov_dd(times[j - 1], times[i - 1]);
                for l in 1..i {
                    let u_l_ti = if i == j {
                        col[l - 1]
                    } else {
                        u_table[i - 1][l - 1]
                    };
                    v = v.sub(col[l - 1].mul(u_l_ti).div(pivots[l - 1]));
                }
                col.push(v);
            }
            let pivot = col[j - 1];
            if pivot.to_f64() <= 0.0 {
                return Err(Error::DegenerateConditioning(format!(
                    "pivot {} nonpositive in extended-precision recursion",
                    pivot.to_f64()
                )));
            }
            pivots.push(pivot);
            u_table.push(col);
        }
        Ok(DdConditioner {
            spec,
            times,
            u_table,
            pivots,
        })
    }

    fn u_vector(&self, t: Dd) -> Vec<Dd> {
        let n = self.times.len();
        let mut u: Vec<Dd> = Vec::with_capacity(n);
        for j in 1..=n {
            let mut v = self.spec.eval_cov_dd(t, self.times[j - 1]);
            for i in 1..j {
                v = v.sub(
                    u[i - 1]
                        .mul(self.u_table[j - 1][i - 1])
                        .div(self.pivots[i - 1]),
                );
            }
            u.push(v);
        }
        u
    }

    pub fn cond_cov(&self, t: Dd, s: Dd) -> Dd {
        let ut = self.u_vector(t);
        let us = self.u_vector(s);
        let mut v = self.spec.eval_cov_dd(t, s);
        for j in 0..self.times.len() {
            v = v.sub(ut[j].mul(us[j]).div(self.pivots[j]));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::SplitMix;
    use approx::assert_relative_eq;

    fn bm() -> KernelSpec {
        KernelSpec::fbm(0.5).unwrap()
    }

    fn pin(times: &[f64], values: &[f64]) -> Observations {
        Observations::new(times.to_vec(), values.to_vec()).unwrap()
    }

    #[test]
    fn observations_validation() {
        assert!(Observations::new(vec![1.0, 0.5], vec![0.0, 0.0]).is_err());
        assert!(Observations::new(vec![0.0], vec![0.0]).is_err());
        assert!(Observations::new(vec![1.0], vec![]).is_err());
        assert!(Observations::new(vec![], vec![]).unwrap().is_empty());
    }

    #[test]
    fn brownian_bridge_alpha() {
        let ck = ConditionedKernel::new(bm(), pin(&[1.0], &[0.0])).unwrap();
        assert_relative_eq!(ck.alpha_j(1, 0.4).unwrap(), 0.4, max_relative = 1e-14);
        assert_relative_eq!(ck.alpha_j(1, 1.0).unwrap(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn alpha_at_pin_is_one_any_family() {
        for spec in [
            bm(),
            KernelSpec::fbm(0.7).unwrap(),
            KernelSpec::mfold_ibm(2).unwrap(),
            KernelSpec::integrated_fbm(0.6).unwrap(),
        ] {
            let ck = ConditionedKernel::new(spec, pin(&[0.8], &[1.0])).unwrap();
            assert_relative_eq!(ck.alpha_j(1, 0.8).unwrap(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn fbm_alpha_midpoint_symmetry() {
        let ck =
            ConditionedKernel::new(KernelSpec::fbm(0.7).unwrap(), pin(&[1.0], &[0.0])).unwrap();
        assert_relative_eq!(ck.alpha_j(1, 0.5).unwrap(), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn brownian_bridge_kernel() {
        let ck = ConditionedKernel::new(bm(), pin(&[1.0], &[0.0])).unwrap();
        assert_relative_eq!(ck.cond_cov(0.3, 0.6).unwrap(), 0.12, max_relative = 1e-13);
    }

    #[test]
    fn pins_annihilate_covariance() {
        let mut rng = SplitMix::new(77);
        for spec in [
            KernelSpec::fbm(0.3).unwrap(),
            KernelSpec::cheridito(0.8, 1.0, 0.7).unwrap(),
            KernelSpec::mfold_ibm(2).unwrap(),
            KernelSpec::integrated_fbm(0.4).unwrap(),
        ] {
            let obs = pin(&[0.5, 1.1, 1.9], &[0.2, -0.3, 0.4]);
            let ck = ConditionedKernel::new(spec, obs.clone()).unwrap();
            let scale = spec.eval_cov(1.9, 1.9).unwrap();
            for &tj in obs.times() {
                for _ in 0..4 {
                    let s = 2.5 * rng.uniform() + 0.01;
                    let v = ck.cond_cov(tj, s).unwrap();
                    assert!(v.abs() <= 1e-12 * scale, "{spec:?}: k_n({tj},{s}) = {v}");
                }
            }
        }
    }

    #[test]
    fn kj_exchangeable_forms() {
        let mut rng = SplitMix::new(3);
        for spec in [
            bm(),
            KernelSpec::fbm(0.3).unwrap(),
            KernelSpec::mfold_ibm(2).unwrap(),
        ] {
            let ck =
                ConditionedKernel::new(spec, pin(&[0.7, 1.3, 2.0], &[0.0, 0.5, -0.2])).unwrap();
            for j in 1..=3 {
                let t = 3.0 * rng.uniform() + 0.01;
                let s = 3.0 * rng.uniform() + 0.01;
                let p = ck.pivot(j);
                let left = ck.alpha_j(j, t).unwrap() * (ck.alpha_j(j, s).unwrap() * p);
                let right = ck.alpha_j(j, s).unwrap() * (ck.alpha_j(j, t).unwrap() * p);
                assert!((left - right).abs() <= 1e-12 * (1.0 + left.abs()));
            }
        }
    }

    #[test]
    fn schur_matches_brownian_bridge_grid() {
        let m = cond_cov_matrix(&bm(), &pin(&[1.0], &[0.0]), &[0.3, 0.6]).unwrap();
        assert_relative_eq!(m[(0, 0)], 0.21, max_relative = 1e-13);
        assert_relative_eq!(m[(0, 1)], 0.12, max_relative = 1e-13);
        assert_relative_eq!(m[(1, 0)], 0.12, max_relative = 1e-13);
        assert_relative_eq!(m[(1, 1)], 0.24, max_relative = 1e-13);
    }

    #[test]
    fn unconditioned_matrix_is_plain_gram() {
        let spec = KernelSpec::fbm(0.3).unwrap();
        let m = cond_cov_matrix(&spec, &Observations::empty(), &[0.4, 1.0]).unwrap();
        assert_relative_eq!(
            m[(0, 0)],
            spec.eval_cov(0.4, 0.4).unwrap(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            m[(0, 1)],
            spec.eval_cov(0.4, 1.0).unwrap(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn recursion_matches_schur_randomized() {
        let mut rng = SplitMix::new(2024);
        let families = [
            KernelSpec::fbm(0.3).unwrap(),
            KernelSpec::fbm(0.7).unwrap(),
            KernelSpec::cheridito(0.8, 0.9, 0.5).unwrap(),
            KernelSpec::mfold_ibm(2).unwrap(),
            KernelSpec::integrated_fbm(0.6).unwrap(),
        ];
        for spec in families {
            for _ in 0..6 {
                let n = 1 + (rng.uniform() * 4.0) as usize;
                let mut times: Vec<f64> = (0..n).map(|_| 0.1 + 2.9 * rng.uniform()).collect();
                times.sort_by(|a, b| a.partial_cmp(b).unwrap());
                times.dedup_by(|a, b| (*a - *b).abs() < 0.05);
                let values: Vec<f64> = times.iter().map(|_| rng.normal()).collect();
                let obs = pin(&times, &values);
                let grid: Vec<f64> = (0..6).map(|_| 0.05 + 2.95 * rng.uniform()).collect();
                let ck = ConditionedKernel::new(spec, obs.clone()).unwrap();
                let schur = cond_cov_matrix(&spec, &obs, &grid).unwrap();
                for a in 0..grid.len() {
                    for b in 0..grid.len() {
                        let rec = ck.cond_cov(grid[a], grid[b]).unwrap();
                        assert!(
                            (rec - schur[(a, b)]).abs() < 1e-9,
                            "{spec:?}: recursion {rec} vs schur {} at ({}, {})",
                            schur[(a, b)],
                            grid[a],
                            grid[b]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn conditional_mean_examples() {
        // zero pin keeps the mean at zero
        let m = cond_mean(&bm(), &pin(&[1.0], &[0.0]), &[0.5]).unwrap();
        assert!(m[0].abs() < 1e-14);
        // Brownian motion pinned to 2 at time 1: mean is 2t before the pin
        let m = cond_mean(&bm(), &pin(&[1.0], &[2.0]), &[0.5]).unwrap();
        assert_relative_eq!(m[0], 1.0, max_relative = 1e-12);
        // pins are reproduced exactly
        for spec in [
            KernelSpec::fbm(0.7).unwrap(),
            KernelSpec::mfold_ibm(2).unwrap(),
        ] {
            let obs = pin(&[0.6, 1.4], &[0.3, -0.8]);
            let m = cond_mean(&spec, &obs, &[0.6, 1.4]).unwrap();
            assert_relative_eq!(m[0], 0.3, epsilon = 1e-10);
            assert_relative_eq!(m[1], -0.8, epsilon = 1e-10);
        }
    }

    #[test]
    fn cond_mean_requires_observations() {
        assert!(cond_mean(&bm(), &Observations::empty(), &[0.5]).is_err());
    }

    #[test]
    fn degenerate_pin_rejected() {
        // pinning Brownian motion twice at (numerically) identical times
        let obs = Observations::new(vec![1.0, 1.0 + 1e-16], vec![0.0, 0.0]);
        // times must be strictly increasing, so either construction fails or
        // the pivot check fires
        if let Ok(obs) = obs {
            assert!(ConditionedKernel::new(bm(), obs).is_err());
        }
    }

    #[test]
    fn dd_conditioner_matches_f64() {
        let spec = KernelSpec::mfold_ibm(2).unwrap();
        let obs = pin(&[0.5, 1.0], &[0.1, 0.2]);
        let ck = ConditionedKernel::new(spec, obs.clone()).unwrap();
        let dd = DdConditioner::new(spec, &obs).unwrap();
        let v64 = ck.cond_cov(1.7, 2.1).unwrap();
        let vdd = dd.cond_cov(Dd::from(1.7), Dd::from(2.1)).to_f64();
        assert_relative_eq!(v64, vdd, max_relative = 1e-12);
    }
}
