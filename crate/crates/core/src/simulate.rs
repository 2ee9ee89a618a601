//! Exact Gaussian path sampling.
//!
//! [`PathSampler`] factors the (possibly pin-conditioned) Gram matrix of a
//! fixed grid once and draws whole paths as `mean + L z`; [`SequentialState`]
//! extends a lower-triangular factor one time point at a time and samples
//! from the exact conditional law given everything visited so far. The two
//! induce the same joint law. These processes are not Markovian in general,
//! so sequential stepping keeps every past point.

use crate::conditioning::{cond_cov_matrix, cond_mean, Observations};
use crate::kernels::KernelSpec;
use crate::linalg::{packed_index, PackedCholesky};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Joint sampler on a fixed time grid.
#[derive(Debug, Clone)]
pub struct PathSampler {
    grid: Vec<f64>,
    mean: Vec<f64>,
    factor: PackedCholesky,
    rng: ChaCha8Rng,
}

impl PathSampler {
    /// Factor the conditional Gram matrix of `grid` given `obs`. The stream
    /// index of the internal generator starts at 0; see
    /// [`PathSampler::with_stream`].
    pub fn new(spec: &KernelSpec, grid: &[f64], obs: &Observations, seed: u64) -> Result<Self> {
        spec.validate()?;
        if grid.is_empty() {
            return Err(Error::InvalidParameter("empty sampling grid".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] <= 0.0 {
            return Err(Error::InvalidParameter(
                "sampling grid must be positive and strictly increasing".into(),
            ));
        }
        let n = grid.len();
        let cov = cond_cov_matrix(spec, obs, grid)?;
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dense[i * n + j] = cov[(i, j)];
            }
        }
        let factor = PackedCholesky::factor(&dense, n)?;
        let trace: f64 = (0..n).map(|i| dense[i * n + i]).sum();
        let resid = factor.residual(&dense);
        if resid > 1e-8 * trace.max(f64::MIN_POSITIVE) {
            return Err(Error::Factorization(format!(
                "factor residual {resid:.3e} exceeds 1e-8 x trace {trace:.3e}"
            )));
        }
        let mean = if obs.is_empty() {
            vec![0.0; n]
        } else {
            cond_mean(spec, obs, grid)?
        };
        Ok(PathSampler {
            grid: grid.to_vec(),
            mean,
            factor,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Same sampler with the generator positioned on a numbered stream; equal
    /// seed and stream index reproduce the same paths.
    pub fn with_stream(mut self, stream: u64) -> Self {
        self.rng.set_stream(stream);
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Absolute diagonal jitter the factorization needed (0 when none).
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// Draw one path from the internal stream.
    pub fn sample_path(&mut self) -> Vec<f64> {
        let mut rng = self.rng.clone();
        let path = self.sample_path_with(&mut rng);
        self.rng = rng;
        path
    }

    /// Draw one path from a caller-supplied generator.
    pub fn sample_path_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.grid.len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = vec![0.0; n];
        self.factor.lower_times(&z, &mut out);
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o += m;
        }
        out
    }
}

/// Incremental exact conditional sampler: visited points are kept in a
/// growing lower-triangular factor; each step costs O(k²) in the number of
/// points visited so far.
#[derive(Debug, Clone)]
pub struct SequentialState {
    spec: KernelSpec,
    times: Vec<f64>,
    values: Vec<f64>,
    /// Rows of the growing lower-triangular factor, packed.
    l: Vec<f64>,
    /// Whitened visited values `L⁻¹ (values - means)`.
    w: Vec<f64>,
}

impl SequentialState {
    /// Start from the pinned past (possibly empty).
    pub fn new(spec: KernelSpec, obs: &Observations) -> Result<Self> {
        spec.validate()?;
        let mut st = SequentialState {
            spec,
            times: Vec::new(),
            values: Vec::new(),
            l: Vec::new(),
            w: Vec::new(),
        };
        for (&t, &v) in obs.times().iter().zip(obs.values()) {
            st.absorb(t, v)?;
        }
        Ok(st)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Exact conditional law of `X_t` given all visited points.
    pub fn conditional_law(&self, t: f64) -> Result<(f64, f64)> {
        let (mean, var, _) = self.conditional_internals(t)?;
        Ok((mean, var))
    }

    fn conditional_internals(&self, t: f64) -> Result<(f64, f64, Vec<f64>)> {
        let k = self.times.len();
        let mut c = Vec::with_capacity(k);
        for &ti in &self.times {
            c.push(self.spec.eval_cov(t, ti)?);
        }
        // forward-solve L v = c against the packed rows; zero pivots carry
        // deterministic components and contribute nothing
        let mut v = c;
        for i in 0..k {
            let (done, rest) = v.split_at_mut(i);
            let row = &self.l[packed_index(i, 0)..packed_index(i, i)];
            let dot: f64 = row.iter().zip(done.iter()).map(|(a, w)| a * w).sum();
            let d = self.l[packed_index(i, i)];
            rest[0] = if d > 0.0 { (rest[0] - dot) / d } else { 0.0 };
        }
        let base = self.spec.eval_cov(t, t)?;
        let mut var = base;
        let mut mean = 0.0;
        for (vi, wi) in v.iter().zip(&self.w) {
            var -= vi * vi;
            mean += vi * wi;
        }
        if var < -1e-14 * base.max(f64::MIN_POSITIVE) {
            eprintln!(
                "warning: conditional variance {var:.3e} at t = {t} clamped to 0 (degenerate \
                 extension)"
            );
        }
        Ok((mean, var.max(0.0), v))
    }

    fn absorb(&mut self, t: f64, value: f64) -> Result<()> {
        let (mean, var, v) = self.conditional_internals(t)?;
        let d = var.sqrt();
        self.l.extend_from_slice(&v);
        self.l.push(d);
        self.w.push(if d > 0.0 { (value - mean) / d } else { 0.0 });
        self.times.push(t);
        self.values.push(value);
        Ok(())
    }

    /// Sample `X_t` given everything visited, record it, and return it.
    /// `t` must exceed all visited times.
    pub fn step<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> Result<f64> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::InvalidParameter(format!(
                    "next time {t} must exceed the last visited time {last}"
                )));
            }
        } else if t <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "next time must be positive, got {t}"
            )));
        }
        let (mean, var, v) = self.conditional_internals(t)?;
        let d = var.sqrt();
        let z: f64 = rng.sample(StandardNormal);
        let value = mean + d * z;
        self.l.extend_from_slice(&v);
        self.l.push(d);
        self.w.push(z);
        self.times.push(t);
        self.values.push(value);
        Ok(value)
    }
}
