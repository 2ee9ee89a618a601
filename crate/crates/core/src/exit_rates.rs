//! Barrier-crossing rate functionals of the small-window bridge.
//!
//! For a bridge from `x_n` to `y` over the unit window, the exponential decay
//! rate of the probability of touching an upper level `U` is
//!
//! ```text
//! I_Y^U = inf_{t ∈ [0,1]} [ (U - x_n)(1 - β̄_t) + β̄_t (U - y) ]² / (2 k̄_Y(t,t))
//! ```
//!
//! (lower barriers mirror with `x_n - L`, `y - L`; a double barrier takes the
//! minimum of the two one-sided rates). The ratio can be multimodal for
//! refined bridge kernels, so the infimum is located by a dense 401-point
//! scan of `[δ, 1-δ]` followed by golden-section refinement of the best
//! cell; the objective blows up at both endpoints whenever the numerator
//! stays positive, so the minimum is interior.

use crate::asymptotics::BridgeAsymptotics;
use crate::kernels::KernelSpec;
use crate::{Error, Result};

/// Number of scan points.
pub const SCAN_POINTS: usize = 401;

/// Endpoint margin δ: both the numerator and `k̄_Y(t,t)` can vanish at the
/// window ends, so the scan stays inside `[δ, 1-δ]`.
pub const ENDPOINT_MARGIN: f64 = 1e-4;

/// Absolute t-tolerance of the golden-section refinement.
pub const REFINE_TOL: f64 = 1e-10;

/// Precomputed `β̄` and `2 k̄_Y(t,t)` on the scan grid. One profile serves
/// every rate query against the same [`BridgeAsymptotics`]; queries allocate
/// nothing.
#[derive(Debug, Clone)]
pub struct RateProfile {
    ts: Vec<f64>,
    beta: Vec<f64>,
    var2: Vec<f64>,
}

impl RateProfile {
    pub fn new(ba: &BridgeAsymptotics) -> Result<Self> {
        let mut ts = Vec::with_capacity(SCAN_POINTS);
        let mut beta = Vec::with_capacity(SCAN_POINTS);
        let mut var2 = Vec::with_capacity(SCAN_POINTS);
        let lo = ENDPOINT_MARGIN;
        let hi = 1.0 - ENDPOINT_MARGIN;
        for i in 0..SCAN_POINTS {
            let t = lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64;
            ts.push(t);
            beta.push(ba.bar_beta(t)?);
            var2.push(2.0 * ba.bar_k_y(t, t)?);
        }
        Ok(RateProfile { ts, beta, var2 })
    }

    /// `inf_t (a (1-β̄_t) + β̄_t b)² / (2 k̄_Y(t,t))` for positive barrier
    /// distances `a` (window start) and `b` (window end).
    pub fn minimize(&self, ba: &BridgeAsymptotics, a: f64, b: f64) -> Result<f64> {
        let objective = |t: f64| -> Result<f64> {
            let beta = ba.bar_beta(t)?;
            let var2 = 2.0 * ba.bar_k_y(t, t)?;
            let num = a * (1.0 - beta) + beta * b;
            Ok(if var2 > 0.0 {
                num * num / var2
            } else {
                f64::INFINITY
            })
        };
        // dense scan
        let mut best = 0usize;
        let mut best_val = f64::INFINITY;
        for i in 0..SCAN_POINTS {
            let num = a * (1.0 - self.beta[i]) + self.beta[i] * b;
            let val = if self.var2[i] > 0.0 {
                num * num / self.var2[i]
            } else {
                f64::INFINITY
            };
            if val < best_val {
                best_val = val;
                best = i;
            }
        }
        if best_val.is_infinite() {
            return Err(Error::Numeric(
                "rate objective infinite across the whole scan grid".into(),
            ));
        }
        // golden-section refinement inside the bracketing cells
        let lo = self.ts[best.saturating_sub(1)];
        let hi = self.ts[(best + 1).min(SCAN_POINTS - 1)];
        let refined = golden_min(&objective, lo, hi, REFINE_TOL)?;
        Ok(refined.min(best_val))
    }
}

fn golden_min<F: Fn(f64) -> Result<f64>>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(f1.min(f2))
}

/// A single bridge-step crossing problem: window endpoints and barriers.
#[derive(Debug, Clone)]
pub struct ExitProblem<'a> {
    ba: &'a BridgeAsymptotics,
    x_n: f64,
    y: f64,
    upper: Option<f64>,
    lower: Option<f64>,
}

impl<'a> ExitProblem<'a> {
    pub fn new(
        ba: &'a BridgeAsymptotics,
        x_n: f64,
        y: f64,
        upper: Option<f64>,
        lower: Option<f64>,
    ) -> Result<Self> {
        if upper.is_none() && lower.is_none() {
            return Err(Error::InvalidParameter(
                "at least one barrier is required".into(),
            ));
        }
        if let (Some(l), Some(u)) = (lower, upper) {
            if l > u {
                return Err(Error::InvalidParameter(format!(
                    "lower barrier {l} above upper barrier {u}"
                )));
            }
        }
        Ok(ExitProblem {
            ba,
            x_n,
            y,
            upper,
            lower,
        })
    }

    /// Upper-barrier rate `I_Y^U`; zero when the window end already touches
    /// the barrier.
    pub fn rate_upper(&self) -> Result<f64> {
        let u = self
            .upper
            .ok_or_else(|| Error::InvalidParameter("no upper barrier".into()))?;
        if self.x_n >= u {
            return Err(Error::InvalidStart(format!(
                "window starts at {} on or above the upper barrier {u}",
                self.x_n
            )));
        }
        if self.y >= u {
            return Ok(0.0);
        }
        let profile = RateProfile::new(self.ba)?;
        profile.minimize(self.ba, u - self.x_n, u - self.y)
    }

    /// Lower-barrier rate `I_Y^L`.
    pub fn rate_lower(&self) -> Result<f64> {
        let l = self
            .lower
            .ok_or_else(|| Error::InvalidParameter("no lower barrier".into()))?;
        if self.x_n <= l {
            return Err(Error::InvalidStart(format!(
                "window starts at {} on or below the lower barrier {l}",
                self.x_n
            )));
        }
        if self.y <= l {
            return Ok(0.0);
        }
        let profile = RateProfile::new(self.ba)?;
        profile.minimize(self.ba, self.x_n - l, self.y - l)
    }

    /// Double-barrier rate `min(I_Y^L, I_Y^U)`; both endpoints must lie
    /// strictly between the barriers.
    pub fn rate_double(&self) -> Result<f64> {
        let (l, u) = match (self.lower, self.upper) {
            (Some(l), Some(u)) => (l, u),
            _ => {
                return Err(Error::InvalidParameter(
                    "double-barrier rate requires both barriers".into(),
                ))
            }
        };
        for (name, v) in [("start", self.x_n), ("end", self.y)] {
            if v <= l || v >= u {
                return Err(Error::InvalidStart(format!(
                    "window {name} {v} outside the open corridor ({l}, {u})"
                )));
            }
        }
        Ok(self.rate_lower()?.min(self.rate_upper()?))
    }
}

/// Closed-form rates available for the two exactly solvable families:
/// `2 (a-x)(a-y)` for Brownian motion and
/// `(3/2) (√|a-x| + √|a-y|)⁴` for integrated Brownian motion.
/// `a` must lie strictly on the same side of both `x` and `y`.
pub fn closed_form_rate(spec: &KernelSpec, a: f64, x: f64, y: f64) -> Result<f64> {
    let dx = a - x;
    let dy = a - y;
    if dx == 0.0 || dy == 0.0 || (dx > 0.0) != (dy > 0.0) {
        return Err(Error::InvalidStart(format!(
            "barrier {a} must be strictly on the same side of start {x} and end {y}"
        )));
    }
    let unsupported = || {
        Error::UnsupportedFamily(
            "closed-form rates exist only for Brownian and integrated Brownian motion".into(),
        )
    };
    let integrated_g = || {
        let root = dx.abs().sqrt() + dy.abs().sqrt();
        1.5 * root.powi(4)
    };
    match *spec {
        KernelSpec::Fbm { hurst } => {
            if hurst == 0.5 {
                Ok(2.0 * dx.abs() * dy.abs())
            } else {
                Err(unsupported())
            }
        }
        KernelSpec::IntegratedFbm { hurst } => {
            if hurst == 0.5 {
                Ok(integrated_g())
            } else {
                Err(unsupported())
            }
        }
        KernelSpec::MfoldIbm { m } => {
            if m == 1 {
                Ok(integrated_g())
            } else {
                Err(unsupported())
            }
        }
        _ => Err(unsupported()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::Observations;
    use crate::testutil::SplitMix;
    use approx::assert_relative_eq;

    fn ba_for(spec: &KernelSpec) -> BridgeAsymptotics {
        BridgeAsymptotics::with_reference(spec, &Observations::empty(), 1.0).unwrap()
    }

    /// Brute-force reference: dense scan with a million points.
    fn dense_oracle(ba: &BridgeAsymptotics, a: f64, b: f64) -> f64 {
        let n = 1_000_000;
        let mut best = f64::INFINITY;
        for i in 1..n {
            let t = i as f64 / n as f64;
            let beta = ba.bar_beta(t).unwrap();
            let var2 = 2.0 * ba.bar_k_y(t, t).unwrap();
            if var2 > 0.0 {
                let num = a * (1.0 - beta) + beta * b;
                best = best.min(num * num / var2);
            }
        }
        best
    }

    #[test]
    fn brownian_closed_form_value() {
        let spec = KernelSpec::fbm(0.5).unwrap();
        let ba = ba_for(&spec);
        let ep = ExitProblem::new(&ba, 0.0, 0.0, Some(1.0), None).unwrap();
        assert_relative_eq!(ep.rate_upper().unwrap(), 2.0, max_relative = 1e-9);
        assert_relative_eq!(
            closed_form_rate(&spec, 1.0, 0.0, 0.5).unwrap(),
            1.0,
            epsilon = 0.0
        );
    }

    #[test]
    fn integrated_brownian_closed_form_value() {
        let spec = KernelSpec::integrated_fbm(0.5).unwrap();
        let ba = ba_for(&spec);
        let ep = ExitProblem::new(&ba, 0.0, 0.0, Some(1.0), None).unwrap();
        assert_relative_eq!(ep.rate_upper().unwrap(), 24.0, max_relative = 1e-9);
        assert_relative_eq!(
            closed_form_rate(&spec, 1.0, 0.0, 0.0).unwrap(),
            24.0,
            epsilon = 0.0
        );
    }

    #[test]
    fn touching_end_gives_zero_rate() {
        let spec = KernelSpec::fbm(0.5).unwrap();
        let ba = ba_for(&spec);
        let ep = ExitProblem::new(&ba, 0.0, 1.0, Some(1.0), None).unwrap();
        assert_eq!(ep.rate_upper().unwrap(), 0.0);
        let ep = ExitProblem::new(&ba, 0.0, -1.2, None, Some(-1.2)).unwrap();
        assert_eq!(ep.rate_lower().unwrap(), 0.0);
    }

    #[test]
    fn lower_barrier_mirror() {
        let spec = KernelSpec::fbm(0.5).unwrap();
        let ba = ba_for(&spec);
        let ep = ExitProblem::new(&ba, 0.0, 0.0, None, Some(-1.0)).unwrap();
        assert_relative_eq!(ep.rate_lower().unwrap(), 2.0, max_relative = 1e-9);
    }

    #[test]
    fn fbm_low_hurst_matches_dense_scan() {
        let spec = KernelSpec::fbm(0.7).unwrap();
        let ba = ba_for(&spec);
        let ep = ExitProblem::new(&ba, 0.2, 0.1, None, Some(-0.5)).unwrap();
        let got = ep.rate_lower().unwrap();
        let expected = dense_oracle(&ba, 0.2 - (-0.5), 0.1 - (-0.5));
        assert_relative_eq!(got, expected, max_relative = 1e-6);
    }

    #[test]
    fn double_barrier_cases() {
        let spec = KernelSpec::fbm(0.5).unwrap();
        let ba = ba_for(&spec);
        // symmetric corridor: both one-sided rates coincide
        let ep = ExitProblem::new(&ba, 0.0, 0.0, Some(1.0), Some(-1.0)).unwrap();
        assert_relative_eq!(ep.rate_double().unwrap(), 2.0, max_relative = 1e-9);
        // distant upper barrier: the lower rate dominates the minimum
        let ep = ExitProblem::new(&ba, 0.0, 0.0, Some(100.0), Some(-1.0)).unwrap();
        assert_relative_eq!(
            ep.rate_double().unwrap(),
            ep.rate_lower().unwrap(),
            max_relative = 1e-12
        );
        // asymmetric fBm corridor against the dense scan
        let spec = KernelSpec::fbm(0.3).unwrap();
        let ba = ba_for(&spec);
        let ep = ExitProblem::new(&ba, 0.0, 0.5, Some(1.0), Some(-1.0)).unwrap();
        let expected = dense_oracle(&ba, 1.0, 0.5).min(dense_oracle(&ba, 1.0, 1.5));
        assert_relative_eq!(ep.rate_double().unwrap(), expected, max_relative = 1e-6);
    }

    #[test]
    fn invalid_start_errors() {
        let spec = KernelSpec::fbm(0.5).unwrap();
        let ba = ba_for(&spec);
        let ep = ExitProblem::new(&ba, 1.5, 0.0, Some(1.0), None).unwrap();
        assert!(matches!(ep.rate_upper(), Err(Error::InvalidStart(_))));
        let ep = ExitProblem::new(&ba, 0.0, 1.5, Some(1.0), Some(-1.0)).unwrap();
        assert!(matches!(ep.rate_double(), Err(Error::InvalidStart(_))));
        assert!(ExitProblem::new(&ba, 0.0, 0.0, None, None).is_err());
        assert!(ExitProblem::new(&ba, 0.0, 0.0, Some(-1.0), Some(1.0)).is_err());
    }

    #[test]
    fn closed_form_agreement_randomized() {
        let mut rng = SplitMix::new(404);
        for spec in [
            KernelSpec::fbm(0.5).unwrap(),
            KernelSpec::integrated_fbm(0.5).unwrap(),
        ] {
            let ba = ba_for(&spec);
            for _ in 0..50 {
                let a = 0.5 + 2.0 * rng.uniform();
                let x = a - 0.05 - 1.5 * rng.uniform();
                let y = a - 0.05 - 1.5 * rng.uniform();
                let ep = ExitProblem::new(&ba, x, y, Some(a), None).unwrap();
                let got = ep.rate_upper().unwrap();
                let expected = closed_form_rate(&spec, a, x, y).unwrap();
                assert!(
                    (got - expected).abs() <= 1e-6 * expected,
                    "{spec:?}: minimizer {got} vs closed form {expected} (a={a}, x={x}, y={y})"
                );
            }
        }
    }

    #[test]
    fn closed_form_requires_same_side() {
        let spec = KernelSpec::fbm(0.5).unwrap();
        assert!(closed_form_rate(&spec, 1.0, 0.0, 1.0).is_err());
        assert!(closed_form_rate(&spec, 1.0, 0.0, 1.5).is_err());
        assert!(closed_form_rate(&KernelSpec::fbm(0.7).unwrap(), 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn rate_decreases_as_end_approaches_barrier() {
        let spec = KernelSpec::fbm(0.3).unwrap();
        let ba = ba_for(&spec);
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let y = -0.5 + k as f64 * 0.15;
            let ep = ExitProblem::new(&ba, 0.0, y, Some(1.0), None).unwrap();
            let rate = ep.rate_upper().unwrap();
            assert!(rate < prev, "rate {rate} at y={y} not below {prev}");
            prev = rate;
        }
        let ep = ExitProblem::new(&ba, 0.0, 1.0, Some(1.0), None).unwrap();
        assert_eq!(ep.rate_upper().unwrap(), 0.0);
    }

    #[test]
    fn brownian_rate_scales_quadratically() {
        let spec = KernelSpec::fbm(0.5).unwrap();
        let ba = ba_for(&spec);
        let base = ExitProblem::new(&ba, 0.1, -0.2, Some(0.8), None)
            .unwrap()
            .rate_upper()
            .unwrap();
        for lambda in [0.5, 2.0, 7.0] {
            let scaled =
                ExitProblem::new(&ba, 0.1 * lambda, -0.2 * lambda, Some(0.8 * lambda), None)
                    .unwrap()
                    .rate_upper()
                    .unwrap();
            assert_relative_eq!(scaled, lambda * lambda * base, max_relative = 1e-9);
        }
    }

    #[test]
    fn objective_blows_up_at_margins() {
        let spec = KernelSpec::fbm(0.7).unwrap();
        let ba = ba_for(&spec);
        let (a, b) = (1.0, 0.7);
        let obj = |t: f64| {
            let beta = ba.bar_beta(t).unwrap();
            let num = a * (1.0 - beta) + beta * b;
            num * num / (2.0 * ba.bar_k_y(t, t).unwrap())
        };
        let interior = RateProfile::new(&ba).unwrap().minimize(&ba, a, b).unwrap();
        assert!(obj(ENDPOINT_MARGIN) > 10.0 * interior);
        assert!(obj(1.0 - ENDPOINT_MARGIN) > 10.0 * interior);
    }
}
