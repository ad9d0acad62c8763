//! Closed-form kernels and the model constants.
//!
//! The driving noise `Y` of the second-kind fractional Ornstein-Uhlenbeck
//! process has the stationary covariance density
//!
//! ```text
//! r(w, z) = κ · φ(|w - z|),   κ = H^{2H-1}(2H-1),
//! φ(t)    = exp(-(1-H) t / H) · (1 - exp(-t/H))^{2H-2}
//! ```
//!
//! which is integrable across the diagonal since `2H - 2 > -1`. Everything
//! downstream (the Gram matrix, the asymptotic variance `σ`, the
//! normalizing sequence `b_T`) is built on this profile.

pub mod quad;
pub mod special;

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use quad::{integrate_power_law, Estimate, Tolerance};

/// Drift `α > 0` and Hurst index `H ∈ (1/2, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    alpha: f64,
    hurst: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, hurst: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(
                "alpha",
                format!("drift must be a finite positive number, got {alpha}"),
            ));
        }
        if !(hurst > 0.5 && hurst < 1.0) {
            return Err(Error::invalid(
                "hurst",
                format!("Hurst index must lie in the open interval (1/2, 1), got {hurst}"),
            ));
        }
        Ok(Self { alpha, hurst })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// `κ = H^{2H-1}(2H-1)`, the prefactor of the covariance density.
    pub fn kernel_scale(&self) -> f64 {
        let h = self.hurst;
        h.powf(2.0 * h - 1.0) * (2.0 * h - 1.0)
    }

    /// Exponential decay rate of the covariance profile, `1/H - 1`.
    pub fn profile_decay(&self) -> f64 {
        1.0 / self.hurst - 1.0
    }

    /// Slowest exponential rate among the integrands on `(0, ∞)`.
    pub fn tail_rate(&self) -> f64 {
        self.alpha.min(self.profile_decay())
    }

    /// Power of the diagonal singularity, `2H - 2 ∈ (-1, 0)`.
    pub fn singular_exponent(&self) -> f64 {
        2.0 * self.hurst - 2.0
    }
}

/// Tolerances for every adaptive quadrature in the crate, plus the upper
/// cutoff used in place of `∞` on half-line integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    pub truncation_length: f64,
}

impl QuadratureSpec {
    pub const DEFAULT_REL_TOL: f64 = 1e-9;
    pub const DEFAULT_ABS_TOL: f64 = 1e-12;
    pub const DEFAULT_MAX_SUBDIVISIONS: usize = 2000;

    /// Default tolerances with a truncation length that certifies the
    /// exponential tail bound for `p`.
    pub fn for_params(p: &ModelParams) -> Self {
        Self::with_tolerances(p, Self::DEFAULT_REL_TOL, Self::DEFAULT_ABS_TOL)
    }

    /// Given tolerances; truncation chosen as `1.25 · ln(1/abs_tol) / rate`.
    pub fn with_tolerances(p: &ModelParams, rel_tol: f64, abs_tol: f64) -> Self {
        let truncation_length = 1.25 * (1.0 / abs_tol).ln().max(1.0) / p.tail_rate();
        Self {
            rel_tol,
            abs_tol,
            max_subdivisions: Self::DEFAULT_MAX_SUBDIVISIONS,
            truncation_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::invalid("rel_tol", format!("must be positive, got {}", self.rel_tol)));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(Error::invalid("abs_tol", format!("must be positive, got {}", self.abs_tol)));
        }
        if !(self.truncation_length > 0.0 && self.truncation_length.is_finite()) {
            return Err(Error::invalid(
                "truncation_length",
                format!("must be positive, got {}", self.truncation_length),
            ));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::invalid("max_subdivisions", "must be at least 1"));
        }
        Ok(())
    }

    /// `exp(-min(α, 1/H - 1) · L)`.
    pub fn tail_bound(&self, p: &ModelParams) -> f64 {
        (-p.tail_rate() * self.truncation_length).exp()
    }

    /// Fails unless the a-priori tail bound is below `abs_tol`.
    pub fn certify_truncation(&self, p: &ModelParams) -> Result<f64> {
        let bound = self.tail_bound(p);
        if bound < self.abs_tol {
            Ok(bound)
        } else {
            Err(Error::Truncation {
                length: self.truncation_length,
                rate: p.tail_rate(),
                bound,
                abs_tol: self.abs_tol,
            })
        }
    }

    pub fn tolerance(&self) -> Tolerance {
        Tolerance {
            rel: self.rel_tol,
            abs: self.abs_tol,
            max_subdivisions: self.max_subdivisions,
        }
    }

    // Inner integrals of nested quadratures run tighter than the outer one.
    fn inner_tolerance(&self) -> Tolerance {
        Tolerance {
            rel: (self.rel_tol * 1e-2).max(1e-14),
            abs: f64::MIN_POSITIVE,
            max_subdivisions: self.max_subdivisions,
        }
    }
}

/// The asymptotic constants of the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    /// `σ_{α,H}`, the asymptotic standard deviation of `√T(α - α̃_T)`.
    pub sigma: f64,
    /// `ρ_{α,H}`, the limit of `(1/T)∫_0^T X_t² dt`.
    pub rho: f64,
    /// `∫_{(0,∞)^3} F`.
    pub triple_integral: f64,
    /// Absolute error estimate for `triple_integral`, including the
    /// truncation tail bound.
    pub estimated_error: f64,
}

/// `a(t) = H e^{t/H}`.
pub fn time_change(t: f64, p: &ModelParams) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain {
            op: "time_change",
            reason: format!("t must be finite and nonnegative, got {t}"),
        });
    }
    Ok(p.hurst * (t / p.hurst).exp())
}

/// `a^{-1}(u) = H log(u/H)`, defined for every `u > 0`.
pub fn inverse_time_change(u: f64, p: &ModelParams) -> Result<f64> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::Domain {
            op: "inverse_time_change",
            reason: format!("u must be finite and positive, got {u}"),
        });
    }
    Ok(p.hurst * (u / p.hurst).ln())
}

/// Stationary profile `φ(t)` for `t > 0`.
#[inline]
pub(crate) fn profile(t: f64, h: f64) -> f64 {
    (-(1.0 - h) * t / h).exp() * (-(-t / h).exp_m1()).powf(2.0 * h - 2.0)
}

/// Covariance density as a function of the lag `t = |w - z| > 0`.
#[inline]
pub fn r_stationary(t: f64, p: &ModelParams) -> f64 {
    p.kernel_scale() * profile(t, p.hurst)
}

/// Covariance density `r_H(w, z)` of the driving noise, evaluated in its
/// stationary form so that large `w, z` do not overflow.
pub fn r_kernel(w: f64, z: f64, p: &ModelParams) -> Result<f64> {
    if !(w >= 0.0 && z >= 0.0 && w.is_finite() && z.is_finite()) {
        return Err(Error::Domain {
            op: "r_kernel",
            reason: format!("arguments must be finite and nonnegative, got ({w}, {z})"),
        });
    }
    if w == z {
        return Err(Error::Singularity {
            op: "r_kernel",
            reason: format!("diagonal w = z = {w}; integrate across it instead"),
        });
    }
    Ok(r_stationary((w - z).abs(), p))
}

/// The integrand `F(y1, y2, y3)` whose integral over `(0,∞)^3` defines σ.
pub fn f_integrand(y1: f64, y2: f64, y3: f64, p: &ModelParams) -> Result<f64> {
    if !(y1 >= 0.0 && y2 > 0.0 && y3 > 0.0) || !(y1.is_finite() && y2.is_finite() && y3.is_finite())
    {
        return Err(Error::Domain {
            op: "f_integrand",
            reason: format!("arguments must be positive and finite, got ({y1}, {y2}, {y3})"),
        });
    }
    if y1 == 0.0 || y2 == y3 {
        return Err(Error::Singularity {
            op: "f_integrand",
            reason: format!("singular at ({y1}, {y2}, {y3})"),
        });
    }
    let (a, h) = (p.alpha, p.hurst);
    let e = 2.0 * h - 2.0;
    let v = (-a * (y1 - y3).abs()).exp()
        * (-a * y2).exp()
        * ((1.0 - 1.0 / h) * (y1 + y2 + y3)).exp()
        * ((-y2 / h).exp() - (-y3 / h).exp()).abs().powf(e)
        * (-(-y1 / h).exp_m1()).powf(e);
    Ok(v)
}

/// `ρ_{α,H} = H^{2H}(2H-1) B(Hα + 1 - H, 2H - 1) / α`.
pub fn rho_const(p: &ModelParams) -> Result<f64> {
    let (a, h) = (p.alpha, p.hurst);
    let beta = special::beta_fn(h * a + 1.0 - h, 2.0 * h - 1.0)?;
    Ok(h.powf(2.0 * h) * (2.0 * h - 1.0) * beta / a)
}

/// `σ_{α,H} = α / (H B(Hα+1-H, 2H-1)) · sqrt(2 ∫F)`.
///
/// `F(y1, y2, y3) = φ(y1) e^{-α|y1-y3|} · e^{-α y2} φ(|y2-y3|)`, so for
/// fixed `y3 = c` the triple integral factors into `K(c) M(c)` with
///
/// ```text
/// K(c) = ∫ φ(y1) e^{-α|y1-c|} dy1 = A(c) + ∫_c^L φ(t) e^{-α(t-c)} dt
/// M(c) = ∫ e^{-α y2} φ(|y2-c|) dy2 = A(c) + e^{-αc} ∫_0^{L-c} φ(t) e^{-αt} dt
/// A(c) = ∫_0^c φ(t) e^{-α(c-t)} dt
/// ```
///
/// Every inner integral is taken in the distance `t` to the singular point
/// with the power-law substitution for exponent `2H - 2`; the outer
/// integrand behaves like `const + c^{2H-1}` near zero and gets the same
/// substitution.
pub fn sigma_const(p: &ModelParams, q: &QuadratureSpec) -> Result<ConstantsReport> {
    q.validate()?;
    let tail = q.certify_truncation(p)?;
    let rho = rho_const(p)?;
    let triple = triple_integral(p, q)?;
    let (a, h) = (p.alpha, p.hurst);
    let beta = special::beta_fn(h * a + 1.0 - h, 2.0 * h - 1.0)?;
    let sigma = a / (h * beta) * (2.0 * triple.value).sqrt();
    Ok(ConstantsReport {
        sigma,
        rho,
        triple_integral: triple.value,
        estimated_error: triple.error + tail,
    })
}

fn triple_integral(p: &ModelParams, q: &QuadratureSpec) -> Result<Estimate> {
    let (a, h) = (p.alpha, p.hurst);
    let len = q.truncation_length;
    let e = p.singular_exponent();
    let inner = q.inner_tolerance();
    let failure: RefCell<Option<Error>> = RefCell::new(None);

    let run = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> f64 {
        if failure.borrow().is_some() {
            return f64::NAN;
        }
        match integrate_power_law(f, lo, hi, e, inner) {
            Ok(est) => est.value,
            Err(err) => {
                failure.borrow_mut().get_or_insert(err);
                f64::NAN
            }
        }
    };

    let outer = |c: f64| -> f64 {
        let shared = run(&|t| profile(t, h) * (-a * (c - t)).exp(), 0.0, c);
        let right_k = run(&|t| profile(t, h) * (-a * (t - c)).exp(), c, len);
        let right_m = (-a * c).exp() * run(&|t| profile(t, h) * (-a * t).exp(), 0.0, len - c);
        (shared + right_k) * (shared + right_m)
    };

    let est = integrate_power_law(outer, 0.0, len, e, q.tolerance());
    if let Some(err) = failure.into_inner() {
        return Err(with_context(err, "inner integral of the sigma triple integral"));
    }
    let est = est.map_err(|err| with_context(err, "outer integral of the sigma triple integral"))?;
    Ok(Estimate {
        error: est.error + 2.0 * inner.rel * est.value.abs(),
        ..est
    })
}

/// `b_T = (1/(Tρ)) ∫_0^T e^{-2αt} ‖e^{α·} 1_{[0,t]}‖² dt`, via the split of
/// the inner norm into a closed-form part and a remainder involving the
/// incomplete Beta function.
///
/// With `a0/y = e^{-s/H}` and the order of the two outer integrals
/// exchanged, the remainder collapses to a single integral:
///
/// ```text
/// b_T = 1 + (e^{-2αT} - 1)/(2αT)
///       - (1/T) ∫_0^T I(e^{-s/H}; Hα+1-H, 2H-1) (1 - e^{-2α(T-s)}) ds
/// ```
///
/// where `I` is the regularized incomplete Beta function.
pub fn b_t_analytic(horizon: f64, p: &ModelParams, q: &QuadratureSpec) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    q.validate()?;
    let (a, h) = (p.alpha, p.hurst);
    let (shape_a, shape_b) = (h * a + 1.0 - h, 2.0 * h - 1.0);
    let closed = 1.0 + (-2.0 * a * horizon).exp_m1() / (2.0 * a * horizon);

    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let integrand = |s: f64| -> f64 {
        let x = (-s / h).exp();
        let y = -(-s / h).exp_m1();
        match special::beta_reg_with_complement(x, y, shape_a, shape_b) {
            Ok(ib) => ib * -(-2.0 * a * (horizon - s)).exp_m1(),
            Err(err) => {
                failure.borrow_mut().get_or_insert(err);
                f64::NAN
            }
        }
    };
    // I(e^{-s/H}) = 1 - O(s^{2H-1}) near s = 0.
    let est = integrate_power_law(integrand, 0.0, horizon, p.singular_exponent(), q.tolerance());
    if let Some(err) = failure.into_inner() {
        return Err(err);
    }
    let est = est.map_err(|err| with_context(err, &format!("b_T remainder at T = {horizon}")))?;
    Ok(closed - est.value / horizon)
}

pub(crate) fn with_context(err: Error, context: &str) -> Error {
    match err {
        Error::Convergence {
            context: inner,
            subdivisions,
            last,
            previous,
            error,
        } => Error::Convergence {
            context: if inner.is_empty() {
                context.to_string()
            } else {
                format!("{context}: {inner}")
            },
            subdivisions,
            last,
            previous,
            error,
        },
        other => other,
    }
}
