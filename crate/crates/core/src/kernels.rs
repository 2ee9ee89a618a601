//! Closed-form covariance kernels for the supported process families.
//!
//! Every family is a centered Gaussian process on `t >= 0`:
//!
//! * fractional Brownian motion with Hurst index `H`, covariance
//!   `k_H(t,s) = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2`;
//! * the Cheridito mixed process `c·B + c_H·B^H` with `B, B^H` independent,
//!   covariance `c^2·min(t,s) + c_H^2·k_H(t,s)`;
//! * m-fold integrated Brownian motion, covariance
//!   `(1/(m!)^2) ∫_0^{s∧t} (s-ξ)^m (t-ξ)^m dξ`, evaluated exactly as a
//!   polynomial;
//! * integrated fractional Brownian motion, `∫_0^t Z_u du` with `Z` an fBm,
//!   whose covariance integrates `k_H` twice in closed form.
//!
//! The integrated families also expose their inner kernel `κ(t,s)`, i.e. the
//! covariance of the process being integrated.

use crate::dd::Dd;
use crate::{Error, Result};

/// A covariance family with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// Fractional Brownian motion, `0 < hurst < 1`.
    Fbm { hurst: f64 },
    /// `c·B + c_H·B^H`, independent components, `hurst != 1/2`, `c, c_h != 0`.
    Cheridito { hurst: f64, c: f64, c_h: f64 },
    /// m-fold integrated Brownian motion, `m >= 1`.
    MfoldIbm { m: u32 },
    /// Integrated fractional Brownian motion, `0 < hurst < 1`.
    IntegratedFbm { hurst: f64 },
}

pub use KernelSpec::*;

impl KernelSpec {
    pub fn fbm(hurst: f64) -> Result<Self> {
        let spec = Fbm { hurst };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cheridito(hurst: f64, c: f64, c_h: f64) -> Result<Self> {
        let spec = Cheridito { hurst, c, c_h };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mfold_ibm(m: u32) -> Result<Self> {
        let spec = MfoldIbm { m };
        spec.validate()?;
        Ok(spec)
    }

    pub fn integrated_fbm(hurst: f64) -> Result<Self> {
        let spec = IntegratedFbm { hurst };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let hurst_ok = |h: f64| h > 0.0 && h < 1.0 && h.is_finite();
        match *self {
            Fbm { hurst } | IntegratedFbm { hurst } => {
                if !hurst_ok(hurst) {
                    return Err(Error::InvalidParameter(format!(
                        "hurst index must lie in (0,1), got {hurst}"
                    )));
                }
            }
            Cheridito { hurst, c, c_h } => {
                if !hurst_ok(hurst) || hurst == 0.5 {
                    return Err(Error::InvalidParameter(format!(
                        "cheridito hurst index must lie in (0,1) \\ {{1/2}}, got {hurst}"
                    )));
                }
                if c == 0.0 || c_h == 0.0 || !c.is_finite() || !c_h.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "cheridito weights must be nonzero, got c={c}, c_h={c_h}"
                    )));
                }
            }
            MfoldIbm { m } => {
                if m < 1 {
                    return Err(Error::InvalidParameter(
                        "m-fold integration order must be >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Covariance `k(t, s)`.
    pub fn eval_cov(&self, t: f64, s: f64) -> Result<f64> {
        self.validate()?;
        check_times(t, s)?;
        Ok(match *self {
            Fbm { hurst } => fbm_cov(hurst, t, s),
            Cheridito { hurst, c, c_h } => c * c * t.min(s) + c_h * c_h * fbm_cov(hurst, t, s),
            MfoldIbm { m } => poly_product_integral(m, t, s) / factorial(m).powi(2),
            IntegratedFbm { hurst } => integrated_fbm_cov(hurst, t, s),
        })
    }

    /// Inner kernel `κ(t, s)` of the integrated families.
    pub fn eval_inner(&self, t: f64, s: f64) -> Result<f64> {
        self.validate()?;
        check_times(t, s)?;
        match *self {
            MfoldIbm { m } => Ok(poly_product_integral(m - 1, t, s) / factorial(m - 1).powi(2)),
            IntegratedFbm { hurst } => Ok(fbm_cov(hurst, t, s)),
            _ => Err(Error::UnsupportedFamily(
                "inner kernel exists only for integrated families".into(),
            )),
        }
    }

    /// True for the families built by integrating a Gaussian process.
    pub fn is_integrated(&self) -> bool {
        matches!(self, MfoldIbm { .. } | IntegratedFbm { .. })
    }

    /// Double-double covariance, used by the finite-ε oracle. Polynomial
    /// families are exact; fractional powers are f64-accurate.
    pub(crate) fn eval_cov_dd(&self, t: Dd, s: Dd) -> Dd {
        match *self {
            Fbm { hurst } => fbm_cov_dd(hurst, t, s),
            Cheridito { hurst, c, c_h } => Dd::from(c * c)
                .mul(t.min(s))
                .add(Dd::from(c_h * c_h).mul(fbm_cov_dd(hurst, t, s))),
            MfoldIbm { m } => poly_product_integral_dd(m, t, s).div(Dd::from(factorial(m).powi(2))),
            IntegratedFbm { hurst } => integrated_fbm_cov_dd(hurst, t, s),
        }
    }
}

fn check_times(t: f64, s: f64) -> Result<()> {
    if t < 0.0 || s < 0.0 || !t.is_finite() || !s.is_finite() {
        return Err(Error::Domain(format!(
            "kernel times must be finite and nonnegative, got ({t}, {s})"
        )));
    }
    Ok(())
}

#[inline]
fn fbm_cov(hurst: f64, t: f64, s: f64) -> f64 {
    let p = 2.0 * hurst;
    0.5 * (t.powf(p) + s.powf(p) - (t - s).abs().powf(p))
}

fn fbm_cov_dd(hurst: f64, t: Dd, s: Dd) -> Dd {
    let p = 2.0 * hurst;
    t.powf(p)
        .add(s.powf(p))
        .sub(t.sub(s).abs().powf(p))
        .div(Dd::from(2.0))
}

/// `∫_0^{s∧t} (s-ξ)^m (t-ξ)^m dξ`, exactly, by expanding around the lower
/// endpoint: with `w = s∧t`, `a = s-w`, `b = t-w` all nonnegative,
/// `∫_0^w (a+u)^m (b+u)^m du = Σ_{i,j} C(m,i) C(m,j) a^{m-i} b^{m-j}
/// w^{i+j+1}/(i+j+1)`; every term is nonnegative.
fn poly_product_integral(m: u32, t: f64, s: f64) -> f64 {
    let w = t.min(s);
    if w == 0.0 {
        return 0.0;
    }
    let a = s - w;
    let b = t - w;
    let mut total = 0.0;
    for i in 0..=m {
        let ci = binomial(m, i) * a.powi((m - i) as i32);
        if ci == 0.0 {
            continue;
        }
        for j in 0..=m {
            let cj = binomial(m, j) * b.powi((m - j) as i32);
            if cj == 0.0 {
                continue;
            }
            let p = (i + j + 1) as i32;
            total += ci * cj * w.powi(p) / p as f64;
        }
    }
    total
}

fn poly_product_integral_dd(m: u32, t: Dd, s: Dd) -> Dd {
    let w = t.min(s);
    if w.to_f64() == 0.0 {
        return Dd::ZERO;
    }
    let a = s.sub(w);
    let b = t.sub(w);
    let mut total = Dd::ZERO;
    for i in 0..=m {
        let ci = Dd::from(binomial(m, i)).mul(a.powi(m - i));
        for j in 0..=m {
            let cj = Dd::from(binomial(m, j)).mul(b.powi(m - j));
            let p = i + j + 1;
            total = total.add(ci.mul(cj).mul(w.powi(p)).div(Dd::from(p as f64)));
        }
    }
    total
}

/// `∫_0^t ∫_0^s k_H(u,v) dv du` in closed form.
fn integrated_fbm_cov(hurst: f64, t: f64, s: f64) -> f64 {
    let p1 = 2.0 * hurst + 1.0;
    let p2 = 2.0 * hurst + 2.0;
    let cross = (t.powf(p2) + s.powf(p2) - (t - s).abs().powf(p2)) / (p1 * p2);
    0.5 * (s * t.powf(p1) / p1 + t * s.powf(p1) / p1 - cross)
}

fn integrated_fbm_cov_dd(hurst: f64, t: Dd, s: Dd) -> Dd {
    let p1 = 2.0 * hurst + 1.0;
    let p2 = 2.0 * hurst + 2.0;
    let cross = t
        .powf(p2)
        .add(s.powf(p2))
        .sub(t.sub(s).abs().powf(p2))
        .div(Dd::from(p1 * p2));
    s.mul(t.powf(p1))
        .add(t.mul(s.powf(p1)))
        .div(Dd::from(p1))
        .sub(cross)
        .div(Dd::from(2.0))
}

pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k.min(n));
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

pub(crate) fn factorial(n: u32) -> f64 {
    (1..=n).map(|i| i as f64).product()
}
