//! Small-time asymptotics of the pinned process and of its bridge.
//!
//! Over a shrinking window `[T_n, T_n + ε]` the conditioned process
//! concentrates, and `Cov(X^n_{T_n+εt}, X^n_{T_n+εs}) / ε^p → k̄_n(t,s)` for a
//! family-dependent exponent `p`. Pinning the window end produces the bridge,
//! whose limiting covariance `k̄_Y` may live at a faster scale `ε^q`:
//!
//! * fBm: `k̄_n = k_H` regardless of the pins, `q = 2H`;
//! * Cheridito mix: `k̄_n = σ_H² k_{H∧1/2}` with `σ_H² = c²` (`H > 1/2`) or
//!   `c_H²` (`H < 1/2`), `q = 2(H∧1/2)`;
//! * integrated families: `k̄_n(t,s) = a_n² t s`, which pins the bridge down
//!   to a degenerate limit at the process scale; the refined expansion of the
//!   inner kernel recovers a nontrivial bridge covariance at `q = 3`
//!   (integrated BM), `q = 4` (m-fold, `m ≥ 2`) or `q = 2 + 2H` (integrated
//!   fBm).
//!
//! Every closed-form limit here is backed by [`finite_eps_bridge_cov_oracle`],
//! which evaluates the exact bridge covariance at small `ε` in double-double
//! arithmetic and rescales; the oracle is authoritative when formulas and
//! numbers disagree.

use crate::conditioning::{ConditionedKernel, DdConditioner, Observations};
use crate::dd::Dd;
use crate::kernels::{binomial, factorial, KernelSpec};
use crate::{Error, Result};

/// Inverse-speed exponents of the two limits: the process LDP runs at
/// `ε^process_exp`, the bridge LDP at `ε^bridge_exp`. `refinement_alpha` is
/// the Hölder exponent of the refined expansion when one is needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedExponents {
    pub process_exp: f64,
    pub bridge_exp: f64,
    pub refinement_alpha: Option<f64>,
}

impl SpeedExponents {
    pub fn for_spec(spec: &KernelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            KernelSpec::Fbm { hurst } => SpeedExponents {
                process_exp: 2.0 * hurst,
                bridge_exp: 2.0 * hurst,
                refinement_alpha: None,
            },
            KernelSpec::Cheridito { hurst, .. } => {
                let p = 2.0 * hurst.min(0.5);
                SpeedExponents {
                    process_exp: p,
                    bridge_exp: p,
                    refinement_alpha: None,
                }
            }
            KernelSpec::MfoldIbm { m } => SpeedExponents {
                process_exp: 2.0,
                bridge_exp: if m == 1 { 3.0 } else { 4.0 },
                refinement_alpha: Some(1.0),
            },
            KernelSpec::IntegratedFbm { hurst } => SpeedExponents {
                process_exp: 2.0,
                bridge_exp: 2.0 + 2.0 * hurst,
                refinement_alpha: Some(if hurst < 0.5 {
                    2.0 * hurst
                } else if hurst == 0.5 {
                    1.0
                } else {
                    2.0 * hurst - 1.0
                }),
            },
        })
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Family-specific limit data, fixed at construction.
#[derive(Debug, Clone)]
enum BridgeKind {
    Fbm {
        hurst: f64,
    },
    Cheridito {
        h_eff: f64,
        sigma2: f64,
    },
    /// Integrated fBm; also hosts 1-fold integrated BM at `hurst = 1/2`.
    Integrated {
        hurst: f64,
        a_n2: f64,
    },
    /// m-fold integrated BM, `m >= 2`: the conditioned second-order shape is
    /// `φ̄_n(t,s) = c31 (t³s + ts³) + c22 t²s²` and the bridge adds the
    /// `b_n²/a_n²` quadratic term.
    Mfold {
        a_n2: f64,
        b_n: f64,
        c31: f64,
        c22: f64,
    },
}

/// The asymptotic objects of one pinned instance: `k̄_n`, `β̄`, `k̄_Y` and the
/// inverse-speed exponents. Immutable and shareable once built.
#[derive(Debug, Clone)]
pub struct BridgeAsymptotics {
    spec: KernelSpec,
    obs: Observations,
    t_ref: f64,
    exps: SpeedExponents,
    kind: BridgeKind,
}

impl BridgeAsymptotics {
    /// Build at the last pin time. Requires at least one observation; use
    /// [`BridgeAsymptotics::with_reference`] for an unpinned process.
    pub fn new(spec: &KernelSpec, obs: &Observations) -> Result<Self> {
        let t_ref = obs.last_time().ok_or_else(|| {
            Error::InvalidParameter("no observations: supply an explicit reference time".into())
        })?;
        Self::with_reference(spec, obs, t_ref)
    }

    /// Build at an explicit window-start time, which must equal the last pin
    /// time when pins are present.
    pub fn with_reference(spec: &KernelSpec, obs: &Observations, t_ref: f64) -> Result<Self> {
        spec.validate()?;
        if t_ref <= 0.0 || !t_ref.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "reference time must be positive, got {t_ref}"
            )));
        }
        if let Some(last) = obs.last_time() {
            if last != t_ref {
                return Err(Error::InvalidParameter(format!(
                    "reference time {t_ref} must equal the last pin time {last}"
                )));
            }
        }
        let exps = SpeedExponents::for_spec(spec)?;
        let kind = match *spec {
            KernelSpec::Fbm { hurst } => BridgeKind::Fbm { hurst },
            KernelSpec::Cheridito { hurst, c, c_h } => BridgeKind::Cheridito {
                h_eff: hurst.min(0.5),
                sigma2: if hurst > 0.5 { c * c } else { c_h * c_h },
            },
            KernelSpec::MfoldIbm { .. } | KernelSpec::IntegratedFbm { .. } => {
                let coeffs = ExpansionCoeffs::new(spec, obs, t_ref)?;
                match coeffs.shape {
                    IntShape::Ifbm { hurst } => BridgeKind::Integrated {
                        hurst,
                        a_n2: coeffs.a_n2,
                    },
                    IntShape::Mfold { .. } => BridgeKind::Mfold {
                        a_n2: coeffs.a_n2,
                        b_n: coeffs.b_n,
                        c31: coeffs.phi31 - coeffs.psi_sum,
                        c22: coeffs.phi22 - coeffs.d_sum,
                    },
                }
            }
        };
        Ok(BridgeAsymptotics {
            spec: *spec,
            obs: obs.clone(),
            t_ref,
            exps,
            kind,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn obs(&self) -> &Observations {
        &self.obs
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref
    }

    pub fn exponents(&self) -> &SpeedExponents {
        &self.exps
    }

    /// Limiting covariance `k̄_n(t,s)` of the pinned process on the unit window.
    pub fn bar_k_n(&self, t: f64, s: f64) -> Result<f64> {
        check_unit("t", t)?;
        check_unit("s", s)?;
        Ok(match self.kind {
            BridgeKind::Fbm { hurst } => fbm_unit_cov(hurst, t, s),
            BridgeKind::Cheridito { h_eff, sigma2 } => sigma2 * fbm_unit_cov(h_eff, t, s),
            BridgeKind::Integrated { a_n2, .. } | BridgeKind::Mfold { a_n2, .. } => a_n2 * t * s,
        })
    }

    /// `β̄_t = k̄_n(t,1) / k̄_n(1,1)`.
    pub fn bar_beta(&self, t: f64) -> Result<f64> {
        let denom = self.bar_k_n(1.0, 1.0)?;
        if denom <= 0.0 {
            return Err(Error::DegenerateConditioning(format!(
                "limit variance k_n(1,1) = {denom} not positive"
            )));
        }
        Ok(self.bar_k_n(t, 1.0)? / denom)
    }

    /// Limiting covariance `k̄_Y(t,s)` of the bridge on the unit window, at
    /// inverse speed `ε^bridge_exp`.
    pub fn bar_k_y(&self, t: f64, s: f64) -> Result<f64> {
        check_unit("t", t)?;
        check_unit("s", s)?;
        Ok(match self.kind {
            // k̄_n(1,1) = 1 for the fBm shapes
            BridgeKind::Fbm { hurst } => {
                fbm_unit_cov(hurst, t, s)
                    - fbm_unit_cov(hurst, t, 1.0) * fbm_unit_cov(hurst, s, 1.0)
            }
            BridgeKind::Cheridito { h_eff, sigma2 } => {
                sigma2
                    * (fbm_unit_cov(h_eff, t, s)
                        - fbm_unit_cov(h_eff, t, 1.0) * fbm_unit_cov(h_eff, s, 1.0))
            }
            BridgeKind::Integrated { hurst, .. } => {
                false_bridge(|a, b| ifbm_phi(hurst, a, b), t, s)
            }
            BridgeKind::Mfold {
                a_n2,
                b_n,
                c31,
                c22,
            } => {
                let phi =
                    |a: f64, b: f64| c31 * (a * a * a * b + a * b * b * b) + c22 * a * a * b * b;
                // quadratic correction of the second-order limit; the
                // coefficient is b_n²/a_n², settled by the finite-ε oracle
                false_bridge(phi, t, s)
                    + b_n * b_n / a_n2 * (t * s * s + t * t * s - t * t * s * s - t * s)
            }
        })
    }
}

/// `φ(t,s) + ts·φ(1,1) - t·φ(1,s) - s·φ(t,1)`.
fn false_bridge<F: Fn(f64, f64) -> f64>(phi: F, t: f64, s: f64) -> f64 {
    phi(t, s) + t * s * phi(1.0, 1.0) - t * phi(1.0, s) - s * phi(t, 1.0)
}

#[inline]
fn fbm_unit_cov(hurst: f64, t: f64, s: f64) -> f64 {
    let p = 2.0 * hurst;
    0.5 * (t.powf(p) + s.powf(p) - (t - s).abs().powf(p))
}

/// `φ̄_H`, the second-order limit shape of integrated fBm. At `H = 1/2` the
/// linear term of the inner kernel joins the same order and changes the
/// shape; both branches yield the same `k̄_Y` because they differ by a
/// combination the bridge annihilates.
fn ifbm_phi(hurst: f64, t: f64, s: f64) -> f64 {
    if hurst == 0.5 {
        let w = t.min(s);
        w * w * w / 3.0 + 0.5 * w * w * (t - s).abs()
    } else {
        let p = 2.0 * hurst + 2.0;
        ((t - s).abs().powf(p) - t.powf(p) - s.powf(p))
            / (2.0 * (2.0 * hurst + 1.0) * (2.0 * hurst + 2.0))
    }
}

/// Shape of the refined expansion for an integrated family.
#[derive(Debug, Clone, Copy)]
enum IntShape {
    /// Integrated fBm; also hosts 1-fold integrated BM at `hurst = 1/2`.
    Ifbm { hurst: f64 },
    /// m-fold integrated BM with `m >= 2`.
    Mfold { m: u32 },
}

/// Refined expansion coefficients of an integrated family around `T_n`:
///
/// ```text
/// Cov(X_{T_n+εt}-X_{T_n}, X_{T_n+εs}-X_{T_n})
///     = ε² [ a² ts + b (t²s + ts²) ε + φ̄(t,s) ε^{1+α} + … ]
/// k(T_n+εt, T) - k(T_n, T)
///     = ε  [ c(T) t + d(T) t² ε + ψ̄(t;T) ε^{1+α} + … ]
/// ```
///
/// plus their pin-conditioned versions, obtained by running each coefficient
/// through the `x_j(T) = x_{j-1}(T) - α_j(T) x_{j-1}(T_j)` update, with the
/// quadratic sums divided by the conditioning pivots.
#[derive(Debug, Clone)]
pub struct ExpansionCoeffs {
    spec: KernelSpec,
    shape: IntShape,
    ck: Option<ConditionedKernel>,
    t_ref: f64,
    alpha: f64,
    a2: f64,
    b: f64,
    a_n2: f64,
    b_n: f64,
    /// Diagonals `c_{j-1}(T_j)`, `d_{j-1}(T_j)` and the t³-coefficient of
    /// `ψ̄_{j-1}(·; T_j)`.
    c_diag: Vec<f64>,
    d_diag: Vec<f64>,
    s_diag: Vec<f64>,
    /// `Σ_j c_{j-1}(T_j) ψ̄-coeff_{j-1}(T_j) / pivot_j` and `Σ_j d_{j-1}(T_j)² / pivot_j`.
    psi_sum: f64,
    d_sum: f64,
    /// φ̄ monomial coefficients for the m-fold shape:
    /// `φ̄ = phi31 (t³s + ts³) + phi22 t²s²`.
    phi31: f64,
    phi22: f64,
}

/// Coefficient table of the refined small-window expansion; integrated
/// families only.
pub fn expansion_coeffs(spec: &KernelSpec, obs: &Observations) -> Result<ExpansionCoeffs> {
    let t_ref = obs.last_time().ok_or_else(|| {
        Error::InvalidParameter("no observations: supply an explicit reference time".into())
    })?;
    ExpansionCoeffs::new(spec, obs, t_ref)
}

/// As [`expansion_coeffs`], with an explicit window-start time (required when
/// there are no pins).
pub fn expansion_coeffs_at(
    spec: &KernelSpec,
    obs: &Observations,
    t_ref: f64,
) -> Result<ExpansionCoeffs> {
    ExpansionCoeffs::new(spec, obs, t_ref)
}

impl ExpansionCoeffs {
    fn new(spec: &KernelSpec, obs: &Observations, t_ref: f64) -> Result<Self> {
        spec.validate()?;
        if !spec.is_integrated() {
            return Err(Error::UnsupportedFamily(
                "refined expansion coefficients exist only for integrated families".into(),
            ));
        }
        if t_ref <= 0.0 || !t_ref.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "reference time must be positive, got {t_ref}"
            )));
        }
        if let Some(last) = obs.last_time() {
            if last != t_ref {
                return Err(Error::InvalidParameter(format!(
                    "reference time {t_ref} must equal the last pin time {last}"
                )));
            }
        }
        let shape = match *spec {
            KernelSpec::MfoldIbm { m } if m >= 2 => IntShape::Mfold { m },
            KernelSpec::MfoldIbm { .. } => IntShape::Ifbm { hurst: 0.5 },
            KernelSpec::IntegratedFbm { hurst } => IntShape::Ifbm { hurst },
            _ => unreachable!(),
        };
        let alpha = SpeedExponents::for_spec(spec)?
            .refinement_alpha
            .expect("integrated families always refine");

        let a2 = spec.eval_inner(t_ref, t_ref)?;
        let (b, phi31, phi22) = match shape {
            IntShape::Ifbm { hurst } => (hurst * t_ref.powf(2.0 * hurst - 1.0) / 2.0, 0.0, 0.0),
            IntShape::Mfold { m } => {
                let norm = factorial(m - 1).powi(2).recip();
                let mf = m as f64;
                let b = norm * t_ref.powi(2 * m as i32 - 2) / 4.0;
                let base = norm * t_ref.powi(2 * m as i32 - 3) / (2.0 * mf - 3.0);
                (
                    b,
                    base * (mf - 1.0) * (mf - 2.0) / 6.0,
                    base * (mf - 1.0) * (mf - 1.0) / 4.0,
                )
            }
        };

        let ck = if obs.is_empty() {
            None
        } else {
            Some(ConditionedKernel::new(*spec, obs.clone())?)
        };

        // Diagonal conditioned coefficients x_{j-1}(T_j), one pin at a time.
        let n = obs.len();
        let mut c_diag: Vec<f64> = Vec::with_capacity(n);
        let mut d_diag: Vec<f64> = Vec::with_capacity(n);
        let mut s_diag: Vec<f64> = Vec::with_capacity(n);
        for l in 1..=n {
            let tl = obs.times()[l - 1];
            let mut c = first_order_base(shape, t_ref, tl)?;
            let mut d = second_order_base(shape, t_ref, tl)?;
            let mut s = psi_base(shape, t_ref, tl)?;
            let ckr = ck.as_ref().expect("pins present");
            for i in 1..l {
                let alpha_i = ckr.alpha_j(i, tl)?;
                c -= alpha_i * c_diag[i - 1];
                d -= alpha_i * d_diag[i - 1];
                s -= alpha_i * s_diag[i - 1];
            }
            c_diag.push(c);
            d_diag.push(d);
            s_diag.push(s);
        }

        let mut a_n2 = a2;
        let mut b_n = b;
        let mut psi_sum = 0.0;
        let mut d_sum = 0.0;
        for j in 1..=n {
            let pivot = ck.as_ref().expect("pins present").pivot(j);
            a_n2 -= c_diag[j - 1] * c_diag[j - 1] / pivot;
            b_n -= c_diag[j - 1] * d_diag[j - 1] / pivot;
            psi_sum += c_diag[j - 1] * s_diag[j - 1] / pivot;
            d_sum += d_diag[j - 1] * d_diag[j - 1] / pivot;
        }
        if a_n2 <= 1e-14 * a2 {
            return Err(Error::DegenerateConditioning(format!(
                "limit variance coefficient a_n² = {a_n2:.3e} not positive"
            )));
        }

        Ok(ExpansionCoeffs {
            spec: *spec,
            shape,
            ck,
            t_ref,
            alpha,
            a2,
            b,
            a_n2,
            b_n,
            c_diag,
            d_diag,
            s_diag,
            psi_sum,
            d_sum,
            phi31,
            phi22,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn a_n2(&self) -> f64 {
        self.a_n2
    }

    pub fn b_n(&self) -> f64 {
        self.b_n
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref
    }

    /// `c(T) = ∫_0^T κ(T_n, v) dv`, the first-order window coefficient.
    pub fn c(&self, big_t: f64) -> Result<f64> {
        first_order_base(self.shape, self.t_ref, big_t)
    }

    /// `d(T)`, the second-order window coefficient.
    pub fn d(&self, big_t: f64) -> Result<f64> {
        second_order_base(self.shape, self.t_ref, big_t)
    }

    /// `ψ̄(t; T)`; identically zero for the integrated-fBm shape.
    pub fn psi(&self, t: f64, big_t: f64) -> Result<f64> {
        Ok(psi_base(self.shape, self.t_ref, big_t)? * t * t * t)
    }

    /// `φ̄(t, s)`.
    pub fn phi(&self, t: f64, s: f64) -> f64 {
        match self.shape {
            IntShape::Ifbm { hurst } => ifbm_phi(hurst, t, s),
            IntShape::Mfold { .. } => {
                self.phi31 * (t * t * t * s + t * s * s * s) + self.phi22 * t * t * s * s
            }
        }
    }

    /// Fully conditioned `c_n(T)`.
    pub fn c_n(&self, big_t: f64) -> Result<f64> {
        self.conditioned(big_t, &self.c_diag, |ec, t| ec.c(t))
    }

    /// Fully conditioned `d_n(T)`.
    pub fn d_n(&self, big_t: f64) -> Result<f64> {
        self.conditioned(big_t, &self.d_diag, |ec, t| ec.d(t))
    }

    /// Fully conditioned `ψ̄_n(t; T)`.
    pub fn psi_n(&self, t: f64, big_t: f64) -> Result<f64> {
        Ok(
            self.conditioned(big_t, &self.s_diag, |ec, t| psi_base(ec.shape, ec.t_ref, t))?
                * t
                * t
                * t,
        )
    }

    /// Fully conditioned `φ̄_n(t, s)`.
    pub fn phi_n(&self, t: f64, s: f64) -> f64 {
        let psi_part = self.psi_sum * (t * t * t * s + s * s * s * t);
        let d_part = if self.alpha == 1.0 {
            self.d_sum * t * t * s * s
        } else {
            0.0
        };
        self.phi(t, s) - psi_part - d_part
    }

    fn conditioned<F>(&self, big_t: f64, diag: &[f64], base: F) -> Result<f64>
    where
        F: Fn(&Self, f64) -> Result<f64>,
    {
        let mut v = base(self, big_t)?;
        if let Some(ck) = &self.ck {
            for i in 1..=diag.len() {
                v -= ck.alpha_j(i, big_t)? * diag[i - 1];
            }
        }
        Ok(v)
    }

    /// Order-ε² expansion of the inner kernel at `(T_n + εu, T_n + εv)`; the
    /// remainder is `O(ε³)`.
    pub fn kappa_expansion(&self, eps: f64, u: f64, v: f64) -> Result<f64> {
        let tn = self.t_ref;
        Ok(match self.shape {
            IntShape::Ifbm { hurst } => {
                let p = 2.0 * hurst;
                tn.powf(p)
                    + hurst * tn.powf(p - 1.0) * (u + v) * eps
                    + 0.5 * hurst * (p - 1.0) * tn.powf(p - 2.0) * (u * u + v * v) * eps * eps
                    - 0.5 * (u - v).abs().powf(p) * eps.powf(p)
            }
            IntShape::Mfold { m } => {
                let norm = factorial(m - 1).powi(2).recip();
                let mf = m as f64;
                let quad = u * v + (mf - 2.0) / (2.0 * (2.0 * mf - 3.0)) * (u - v) * (u - v);
                self.spec.eval_inner(tn, tn)?
                    + 0.5 * norm * tn.powi(2 * m as i32 - 2) * (u + v) * eps
                    + norm * (mf - 1.0) * tn.powi(2 * m as i32 - 3) * quad * eps * eps
            }
        })
    }

    /// Exact `∫_0^T κ(T_n + εu, v) dv` in closed form, for `T <= T_n + εu`.
    pub fn kappa_integral(&self, eps: f64, u: f64, big_t: f64) -> Result<f64> {
        let z = self.t_ref + eps * u;
        if big_t < 0.0 || big_t > z {
            return Err(Error::Domain(format!(
                "integral bound {big_t} outside [0, {z}]"
            )));
        }
        Ok(match self.shape {
            IntShape::Ifbm { hurst } => {
                let p1 = 2.0 * hurst + 1.0;
                0.5 * (z.powf(2.0 * hurst) * big_t
                    + (big_t.powf(p1) - z.powf(p1) + (z - big_t).powf(p1)) / p1)
            }
            IntShape::Mfold { m } => {
                let norm = factorial(m - 1).powi(2).recip();
                norm / m as f64 * poly_pair_integral(z - big_t, big_t, m - 1, m)
            }
        })
    }

    /// Order-ε² expansion of [`ExpansionCoeffs::kappa_integral`]; the
    /// remainder is `O(ε³)`.
    pub fn kappa_integral_expansion(&self, eps: f64, u: f64, big_t: f64) -> Result<f64> {
        let c0 = self.c(big_t)?;
        let d0 = self.d(big_t)?;
        let g2 = match self.shape {
            IntShape::Ifbm { hurst } => {
                let tn = self.t_ref;
                let p = 2.0 * hurst;
                // half the second z-derivative of ∫_0^T κ_H(z, v) dv at T_n
                0.5 * (hurst * (p - 1.0) * tn.powf(p - 2.0) * big_t - hurst * tn.powf(p - 1.0)
                    + hurst * (tn - big_t).powf(p - 1.0))
            }
            IntShape::Mfold { m } => {
                if m < 3 {
                    0.0
                } else {
                    let norm = factorial(m - 1).powi(2).recip();
                    let mf = m as f64;
                    norm * (mf - 1.0) * (mf - 2.0) / (2.0 * mf)
                        * poly_pair_integral(self.t_ref - big_t, big_t, m - 3, m)
                }
            }
        };
        // d(T) is the εt²-coefficient of the k-difference, i.e. half the raw
        // εu-coefficient of the window integral
        Ok(c0 + 2.0 * d0 * u * eps + g2 * u * u * eps * eps)
    }
}

/// `c(T)` for the given shape: `∫_0^T κ(T_n, v) dv` in closed form, `T <= T_n`.
fn first_order_base(shape: IntShape, t_ref: f64, big_t: f64) -> Result<f64> {
    check_window_bound(t_ref, big_t)?;
    Ok(match shape {
        IntShape::Ifbm { hurst } => {
            let p1 = 2.0 * hurst + 1.0;
            0.5 * (t_ref.powf(2.0 * hurst) * big_t
                + (big_t.powf(p1) - t_ref.powf(p1) + (t_ref - big_t).powf(p1)) / p1)
        }
        IntShape::Mfold { m } => {
            let norm = factorial(m - 1).powi(2).recip();
            norm / m as f64 * poly_pair_integral(t_ref - big_t, big_t, m - 1, m)
        }
    })
}

/// `d(T)` for the given shape: half the first z-derivative of the window
/// integral at `T_n`.
fn second_order_base(shape: IntShape, t_ref: f64, big_t: f64) -> Result<f64> {
    check_window_bound(t_ref, big_t)?;
    Ok(match shape {
        IntShape::Ifbm { hurst } => {
            let p = 2.0 * hurst;
            0.5 * (hurst * t_ref.powf(p - 1.0) * big_t - 0.5 * t_ref.powf(p)
                + 0.5 * (t_ref - big_t).powf(p))
        }
        IntShape::Mfold { m } => {
            if m < 2 {
                0.0
            } else {
                let norm = factorial(m - 1).powi(2).recip();
                let mf = m as f64;
                norm * (mf - 1.0) / (2.0 * mf) * poly_pair_integral(t_ref - big_t, big_t, m - 2, m)
            }
        }
    })
}

/// t³-coefficient of `ψ̄(t; T)`; nonzero only for the m-fold shape with `m >= 3`.
fn psi_base(shape: IntShape, t_ref: f64, big_t: f64) -> Result<f64> {
    check_window_bound(t_ref, big_t)?;
    Ok(match shape {
        IntShape::Ifbm { .. } => 0.0,
        IntShape::Mfold { m } => {
            if m < 3 {
                0.0
            } else {
                let norm = factorial(m - 1).powi(2).recip();
                let mf = m as f64;
                norm * (mf - 1.0) * (mf - 2.0) / (6.0 * mf)
                    * poly_pair_integral(t_ref - big_t, big_t, m - 3, m)
            }
        }
    })
}

fn check_window_bound(t_ref: f64, big_t: f64) -> Result<()> {
    if big_t < 0.0 || big_t > t_ref {
        return Err(Error::Domain(format!(
            "window coefficient defined for 0 <= T <= {t_ref}, got {big_t}"
        )));
    }
    Ok(())
}

/// `∫_0^T (A + w)^p w^q dw` with `A >= 0`, exactly; all terms nonnegative.
fn poly_pair_integral(a: f64, big_t: f64, p: u32, q: u32) -> f64 {
    let mut total = 0.0;
    for i in 0..=p {
        let e = q + i + 1;
        total += binomial(p, i) * a.powi((p - i) as i32) * big_t.powi(e as i32) / e as f64;
    }
    total
}

/// Exact small-window bridge covariance, rescaled by the bridge inverse speed:
///
/// ```text
/// [ k_n(T_n+εt, T_n+εs)
///     - k_n(T_n+εt, T_n+ε) k_n(T_n+ε, T_n+εs) / k_n(T_n+ε, T_n+ε) ] / ε^q
/// ```
///
/// computed through the conditioning recursion in double-double arithmetic.
/// This is the empirical check behind every `bar_k_y` formula: it converges to
/// `k̄_Y(t, s)` as `ε → 0`. The bridge covariance does not depend on the
/// pinned endpoint value `y`, which is accepted for interface symmetry only.
///
/// Requires at least one pin (the window start must be pinned for the
/// rescaled limit to be the bridge covariance). Warns on `ε < 1e-6`, where
/// even extended precision starts losing the `O(ε^q)` remainder.
pub fn finite_eps_bridge_cov_oracle(
    spec: &KernelSpec,
    obs: &Observations,
    _y: f64,
    eps: f64,
    t: f64,
    s: f64,
) -> Result<f64> {
    spec.validate()?;
    check_unit("t", t)?;
    check_unit("s", s)?;
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if eps < 1e-6 {
        eprintln!(
            "warning: finite-eps bridge oracle at eps = {eps:.2e} is below the trusted floor 1e-6"
        );
    }
    let t_n = obs.last_time().ok_or_else(|| {
        Error::InvalidParameter("oracle needs at least one pin at the window start".into())
    })?;
    let dd = DdConditioner::new(*spec, obs)?;
    let at = |x: f64| Dd::from(t_n).add(Dd::from(eps).mul(Dd::from(x)));
    let (tt, ss, ee) = (at(t), at(s), at(1.0));
    let k_ee = dd.cond_cov(ee, ee);
    if k_ee.to_f64() <= 0.0 {
        return Err(Error::DegenerateConditioning(format!(
            "window-end variance {} not positive at eps = {eps}",
            k_ee.to_f64()
        )));
    }
    let cov = dd
        .cond_cov(tt, ss)
        .sub(dd.cond_cov(tt, ee).mul(dd.cond_cov(ee, ss)).div(k_ee));
    let q = SpeedExponents::for_spec(spec)?.bridge_exp;
    Ok(cov.to_f64() / eps.powf(q))
}
