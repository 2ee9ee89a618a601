//! Shared helpers for unit tests: a deterministic rng, adaptive quadrature
//! oracles, and small dense-matrix utilities.

/// splitmix64, enough randomness for test-instance generation and fully
/// deterministic across platforms.
pub struct SplitMix {
    state: u64,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        SplitMix { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn normal(&mut self) -> f64 {
        // Box-Muller; quality is irrelevant for test-instance generation.
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Adaptive Simpson quadrature on [a, b].
pub fn quad1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, 40)
}

/// `∫_0^t ∫_0^s f(u,v) dv du` by nested adaptive Simpson.
pub fn quad2d<F: Fn(f64, f64) -> f64>(f: F, t: f64, s: f64, tol: f64) -> f64 {
    quad1d(|u| quad1d(|v| f(u, v), 0.0, s, tol * 0.1), 0.0, t, tol)
}

/// Dense row-major Gram matrix of `f` on a grid.
pub fn gram<F: Fn(f64, f64) -> f64>(times: &[f64], f: F) -> Vec<f64> {
    let n = times.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = f(times[i], times[j]);
        }
    }
    g
}

/// Smallest eigenvalue and trace of a dense symmetric matrix.
pub fn min_eigenvalue(matrix: &[f64], n: usize) -> (f64, f64) {
    let m = nalgebra::DMatrix::from_row_slice(n, n, matrix);
    let sym = nalgebra::SymmetricEigen::new(m);
    let lambda_min = sym
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let trace: f64 = (0..n).map(|i| matrix[i * n + i]).sum();
    (lambda_min, trace)
}
