//! Finite-dimensional rate-function quadratic forms.
//!
//! The rate functional of a Gaussian limit is half a squared reproducing-
//! kernel norm; restricted to a time grid it becomes `h ↦ ½ hᵀ K⁺ h` with `K`
//! the Gram matrix of the limiting covariance. The pseudo-inverse is taken
//! through a symmetric eigendecomposition with a relative cutoff because the
//! bridge kernels are exactly singular at the pinned grid points; vectors
//! with mass outside the numerical range are reported out-of-space, the
//! finite-dimensional stand-in for an infinite rate.

use crate::asymptotics::BridgeAsymptotics;
use crate::conditioning::Observations;
use crate::kernels::KernelSpec;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue cutoff of the pseudo-inverse.
pub const EIGENVALUE_CUTOFF: f64 = 1e-12;

/// Relative mass threshold beyond which a vector is declared out-of-space.
pub const OUT_OF_SPACE_TOL: f64 = 1e-6;

/// A grid-restricted rate functional `h ↦ ½ hᵀ K⁺ h`.
#[derive(Debug, Clone)]
pub struct GridRate {
    grid: Vec<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    cutoff: f64,
}

impl GridRate {
    /// Eigendecompose the Gram matrix `k` of a covariance on `grid`. The grid
    /// must be strictly increasing within [0, 1] and include both endpoints.
    pub fn new(grid: Vec<f64>, k: DMatrix<f64>) -> Result<Self> {
        let n = grid.len();
        if n < 2 || grid[0] != 0.0 || grid[n - 1] != 1.0 {
            return Err(Error::InvalidParameter(
                "grid must include 0 and 1 and have at least two points".into(),
            ));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "grid must be strictly increasing".into(),
            ));
        }
        if k.nrows() != n || k.ncols() != n {
            return Err(Error::InvalidParameter(format!(
                "gram matrix is {}x{}, expected {n}x{n}",
                k.nrows(),
                k.ncols()
            )));
        }
        let scale = k.amax();
        if (&k - k.transpose()).amax() > 1e-10 * (1.0 + scale) {
            return Err(Error::InvalidParameter(
                "gram matrix is not symmetric".into(),
            ));
        }
        let sym = nalgebra::SymmetricEigen::new(k.clone());
        let lambda_max = sym.eigenvalues.amax();
        let cutoff = EIGENVALUE_CUTOFF * lambda_max;
        let gr = GridRate {
            grid,
            eigvals: sym.eigenvalues,
            eigvecs: sym.eigenvectors,
            cutoff,
        };
        // K K⁺ K = K within 1e-8 relative
        let reconstructed = gr.k_pinv_k(&k);
        if (&reconstructed - &k).amax() > 1e-8 * (1.0 + scale) {
            return Err(Error::Numeric(format!(
                "pseudo-inverse validation failed: |K K⁺ K - K| = {:.3e}",
                (&reconstructed - &k).amax()
            )));
        }
        Ok(gr)
    }

    /// Build the Gram matrix of a kernel on the grid and wrap it.
    pub fn from_kernel<F: Fn(f64, f64) -> Result<f64>>(grid: Vec<f64>, f: F) -> Result<Self> {
        let n = grid.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = f(grid[i], grid[j])?;
            }
        }
        Self::new(grid, k)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `K K⁺ K` via the retained eigenpairs.
    fn k_pinv_k(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(k.nrows(), k.ncols());
        for i in 0..self.eigvals.len() {
            if self.eigvals[i] > self.cutoff {
                let q = self.eigvecs.column(i);
                // K⁺ restricted to q is q qᵀ / λ, so K K⁺ K picks up λ q qᵀ
                out += q * q.transpose() * self.eigvals[i];
            }
        }
        out
    }

    /// `½ hᵀ K⁺ h`. Errors with out-of-space when `h` has more than
    /// `1e-6 ‖h‖` of mass outside the numerical range of `K`.
    pub fn rate_quadratic(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.grid.len() {
            return Err(Error::InvalidParameter(format!(
                "vector length {} does not match grid length {}",
                h.len(),
                self.grid.len()
            )));
        }
        let hv = DVector::from_column_slice(h);
        let norm = hv.norm();
        let mut rate = 0.0;
        let mut outside_sq = 0.0;
        for i in 0..self.eigvals.len() {
            let w = self.eigvecs.column(i).dot(&hv);
            if self.eigvals[i] > self.cutoff {
                rate += w * w / self.eigvals[i];
            } else {
                outside_sq += w * w;
            }
        }
        if outside_sq.sqrt() > OUT_OF_SPACE_TOL * norm {
            return Err(Error::OutOfSpace(format!(
                "component outside the kernel range: |out| = {:.3e} vs norm {:.3e}",
                outside_sq.sqrt(),
                norm
            )));
        }
        Ok(0.5 * rate)
    }
}

/// Residual of the two equivalent bridge-rate representations on a grid.
///
/// A spanned path `h = x_n + c K_n λ` (rescaled so `h(1) = y`) must satisfy
///
/// ```text
/// ½ ‖h - m̄‖²_{K_Y} = ½ ‖h - x_n‖²_{K_n} - (y - x_n)² / (2 k̄_n(1,1))
/// ```
///
/// with `m̄_t = x_n + β̄_t (y - x_n)`. Returns `|lhs - rhs| / (1 + |lhs|)`.
pub fn bridge_rate_identity_check(
    spec: &KernelSpec,
    obs: &Observations,
    y: f64,
    grid: &[f64],
    lambda: &[f64],
) -> Result<f64> {
    if lambda.len() != grid.len() {
        return Err(Error::InvalidParameter(format!(
            "lambda length {} does not match grid length {}",
            lambda.len(),
            grid.len()
        )));
    }
    let ba = BridgeAsymptotics::new(spec, obs)?;
    let x_n = obs
        .last_value()
        .expect("asymptotics construction requires pins");
    let n = grid.len();

    let rate_n = GridRate::from_kernel(grid.to_vec(), |t, s| ba.bar_k_n(t, s))?;
    let rate_y = GridRate::from_kernel(grid.to_vec(), |t, s| ba.bar_k_y(t, s))?;

    // spanned increment φ = K_n λ, rescaled to hit y - x_n at the endpoint
    let mut phi = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            phi[i] += ba.bar_k_n(grid[i], grid[j])? * lambda[j];
        }
    }
    let end = phi[n - 1];
    let phi_norm: f64 = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if end.abs() <= 1e-12 * (1.0 + phi_norm) {
        return Err(Error::InvalidParameter(
            "spanned path has no endpoint component; cannot rescale to hit y".into(),
        ));
    }
    let scale = (y - x_n) / end;

    let mut h_minus_xn = vec![0.0; n];
    let mut h_minus_m = vec![0.0; n];
    for i in 0..n {
        h_minus_xn[i] = scale * phi[i];
        let beta = ba.bar_beta(grid[i])?;
        h_minus_m[i] = h_minus_xn[i] - beta * (y - x_n);
    }

    let lhs = rate_y.rate_quadratic(&h_minus_m)?;
    let rhs = rate_n.rate_quadratic(&h_minus_xn)?
        - (y - x_n) * (y - x_n) / (2.0 * ba.bar_k_n(1.0, 1.0)?);
    Ok((lhs - rhs).abs() / (1.0 + lhs.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::SplitMix;
    use approx::assert_relative_eq;

    fn brownian_bridge_rate() -> GridRate {
        let grid = vec![0.0, 0.5, 1.0];
        GridRate::from_kernel(grid, |t, s| Ok(t.min(s) - t * s)).unwrap()
    }

    #[test]
    fn zero_vector_zero_rate() {
        let gr = brownian_bridge_rate();
        assert_eq!(gr.rate_quadratic(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_interior_dof() {
        // only interior variance k̄_Y(1/2,1/2) = 1/4: rate = c²/(2·1/4) = 2c²
        let gr = brownian_bridge_rate();
        for c in [0.3, -1.2, 2.0] {
            assert_relative_eq!(
                gr.rate_quadratic(&[0.0, c, 0.0]).unwrap(),
                2.0 * c * c,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn out_of_space_detected() {
        let gr = brownian_bridge_rate();
        // the endpoints carry zero variance; mass there is outside the range
        assert!(matches!(
            gr.rate_quadratic(&[0.1, 0.0, 0.0]),
            Err(Error::OutOfSpace(_))
        ));
    }

    #[test]
    fn reproducing_identity() {
        // rate(K λ) = ½ λᵀ K λ
        let grid: Vec<f64> = vec![0.0, 0.2, 0.45, 0.7, 0.9, 1.0];
        let spec = KernelSpec::fbm(0.7).unwrap();
        let n = grid.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = spec.eval_cov(grid[i], grid[j]).unwrap();
            }
        }
        let gr = GridRate::new(grid, k.clone()).unwrap();
        let mut rng = SplitMix::new(31);
        for _ in 0..20 {
            let lambda = DVector::from_fn(n, |_, _| rng.normal());
            let h = &k * &lambda;
            let expected = 0.5 * lambda.dot(&h);
            let got = gr.rate_quadratic(h.as_slice()).unwrap();
            assert_relative_eq!(got, expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn grid_validation() {
        let k = DMatrix::zeros(2, 2);
        assert!(GridRate::new(vec![0.1, 1.0], k.clone()).is_err());
        assert!(GridRate::new(vec![0.0, 0.9], k.clone()).is_err());
        assert!(GridRate::new(vec![0.0, 0.5, 1.0], k).is_err());
    }

    #[test]
    fn identity_when_endpoint_matches_start() {
        let spec = KernelSpec::fbm(0.5).unwrap();
        let obs = Observations::new(vec![1.0], vec![0.4]).unwrap();
        let grid = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let mut rng = SplitMix::new(4);
        let lambda: Vec<f64> = (0..grid.len()).map(|_| rng.normal()).collect();
        let r = bridge_rate_identity_check(&spec, &obs, 0.4, &grid, &lambda).unwrap();
        assert!(r < 1e-8, "residual {r}");
    }

    #[test]
    fn identity_random_fbm_instances() {
        let mut rng = SplitMix::new(99);
        for &h in &[0.3, 0.5, 0.7] {
            let spec = KernelSpec::fbm(h).unwrap();
            for _ in 0..7 {
                let x_n = rng.normal();
                let y = rng.normal();
                let obs = Observations::new(vec![1.0], vec![x_n]).unwrap();
                let m = 8 + (rng.uniform() * 9.0) as usize;
                let mut grid: Vec<f64> = (0..m - 2).map(|_| 0.02 + 0.96 * rng.uniform()).collect();
                grid.push(0.0);
                grid.push(1.0);
                grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
                grid.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
                let lambda: Vec<f64> = (0..grid.len()).map(|_| rng.normal()).collect();
                let r = bridge_rate_identity_check(&spec, &obs, y, &grid, &lambda).unwrap();
                assert!(r < 1e-8, "H={h}: residual {r}");
            }
        }
    }
}
