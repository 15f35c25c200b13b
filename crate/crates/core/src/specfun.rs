//! Mittag-Leffler function, log-gamma and reciprocal gamma.

use crate::error::{domain, Error, Result};
use crate::quad::integrate;
use crate::real::{DoubleDouble, Real};
use crate::sum::CompensatedSum;

/// A fractional order in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MlOrder(f64);

impl MlOrder {
    pub const ONE: MlOrder = MlOrder(1.0);

    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta <= 1.0 {
            Ok(MlOrder(beta))
        } else {
            Err(domain(alloc::format!("order {beta} is outside (0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_one(self) -> bool {
        self.0 == 1.0
    }
}

impl TryFrom<f64> for MlOrder {
    type Error = Error;
    fn try_from(beta: f64) -> Result<Self> {
        MlOrder::new(beta)
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if x > 0.0 {
        Ok(libm::lgamma_r(x).0)
    } else {
        Err(domain(alloc::format!("log_gamma needs x > 0, got {x}")))
    }
}

/// `1/Γ(x)`, an entire function: zero at `x = 0` and the negative integers.
pub fn recip_gamma(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 && x == libm::floor(x) {
        return 0.0;
    }
    if x > 170.0 {
        return libm::exp(-libm::lgamma_r(x).0);
    }
    1.0 / libm::tgamma(x)
}

/// Limits of the direct-series Mittag-Leffler evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MlConfig {
    /// Largest `|x|` accepted for orders below one.
    pub x_max: f64,
    /// Maximum number of series terms.
    pub term_cap: usize,
    /// Retry in double-double precision when native rounding error is too large.
    pub extended_fallback: bool,
    /// For negative arguments, fall back to quadrature of the integral
    /// representation when both series evaluations lose too many digits.
    pub integral_fallback: bool,
}

impl Default for MlConfig {
    fn default() -> Self {
        MlConfig {
            x_max: 50.0,
            term_cap: 100_000,
            extended_fallback: true,
            integral_fallback: true,
        }
    }
}

/// Precision actually used by [`ml_eval_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Native,
    DoubleDouble,
    /// Quadrature of the integral representation on the negative axis.
    Quadrature,
}

/// Outcome of a Mittag-Leffler evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MlValue {
    pub value: f64,
    /// Bound on the accumulated rounding error of the series, or the
    /// quadrature error estimate.
    pub rounding: f64,
    pub terms: usize,
    pub precision: Precision,
}

/// `E_beta(x) = sum_k x^k / Γ(k beta + 1)` with `|S - E| <= tol * max(1, |S|)`.
pub fn ml_eval(beta: MlOrder, x: f64, tol: f64) -> Result<f64> {
    ml_eval_with(beta, x, tol, &MlConfig::default()).map(|v| v.value)
}

pub fn ml_eval_with(beta: MlOrder, x: f64, tol: f64, config: &MlConfig) -> Result<MlValue> {
    if !(tol > 0.0) {
        return Err(domain("tolerance must be positive"));
    }
    if !x.is_finite() {
        return Err(domain("argument must be finite"));
    }
    if beta.is_one() {
        return Ok(MlValue {
            value: libm::exp(x),
            rounding: 0.0,
            terms: 0,
            precision: Precision::Native,
        });
    }
    if libm::fabs(x) > config.x_max {
        return Err(Error::NonConvergence {
            terms: 0,
            reason: "|x| exceeds the validated range of the direct series",
        });
    }
    let integral = config.integral_fallback && x < 0.0;
    let accept = |r: &MlValue| r.value.is_finite() && r.rounding <= tol * r.value.abs().max(1.0);
    let native = match ml_series::<f64>(beta.get(), x, tol, config.term_cap) {
        Ok(r) if accept(&r) => return Ok(r),
        Err(_) if integral => None,
        other => Some(other?),
    };
    // Rounding scales with the working epsilon, so skip double-double when
    // it cannot bring the native bound under the tolerance.
    let hopeless = |r: &Option<MlValue>| match r {
        Some(r) => r.rounding * (DoubleDouble::EPSILON / f64::EPSILON) * 10.0 > tol * r.value.abs().max(1.0),
        None => true,
    };
    if config.extended_fallback && !(integral && hopeless(&native)) {
        match ml_series::<DoubleDouble>(beta.get(), x, tol, config.term_cap) {
            Ok(r) if accept(&r) => return Ok(r),
            Err(e) if !integral => return Err(e),
            _ => {}
        }
    }
    if integral {
        return ml_integral(beta.get(), -x, tol);
    }
    Err(Error::NonConvergence {
        terms: native.map_or(0, |r| r.terms),
        reason: "cancellation exceeds the working precision",
    })
}

/// `E_β(-y)` for `y > 0` from
/// `sin(βπ)/(βπ) ∫_0^∞ exp(-(yv)^{1/β}) / (v² + 2v cos(βπ) + 1) dv`,
/// with `[1, ∞)` folded onto `(0, 1]` by `v = 1/w`.
fn ml_integral(beta: f64, y: f64, tol: f64) -> Result<MlValue> {
    let (sin, cos) = libm::sincos(beta * core::f64::consts::PI);
    let p = 1.0 / beta;
    let den = |v: f64| v * v + 2.0 * v * cos + 1.0;
    let inner = |v: f64| libm::exp(-libm::pow(y * v, p)) / den(v);
    let outer = |w: f64| libm::exp(-libm::pow(y / w, p)) / den(w);
    let scale = sin / (beta * core::f64::consts::PI);
    let fail = |_| Error::NonConvergence {
        terms: 0,
        reason: "quadrature of the integral representation did not converge",
    };
    // A coarse pass fixes the magnitude for the relative tolerance.
    let rough = integrate(inner, 0.0, 1.0, 1e-8).map_err(fail)?.value + integrate(outer, 0.0, 1.0, 1e-8).map_err(fail)?.value;
    let abs_tol = 0.5 * tol * rough;
    let a = integrate(inner, 0.0, 1.0, abs_tol).map_err(fail)?;
    let b = integrate(outer, 0.0, 1.0, abs_tol).map_err(fail)?;
    Ok(MlValue {
        value: scale * (a.value + b.value),
        rounding: scale * (a.error + b.error),
        terms: a.evaluations + b.evaluations,
        precision: Precision::Quadrature,
    })
}

fn ml_series<R: Real>(beta: f64, x: f64, tol: f64, cap: usize) -> Result<MlValue> {
    let mut acc = CompensatedSum::<R>::new();
    acc.add(R::one());
    let mut rounding = 0.0;
    if x == 0.0 {
        return Ok(MlValue {
            value: 1.0,
            rounding,
            terms: 1,
            precision: precision_of::<R>(),
        });
    }
    let ln_abs = R::from_f64(libm::fabs(x)).ln();
    let beta_r = R::from_f64(beta);
    let mut small_run = 0;
    for k in 1..cap {
        let kr = R::from_f64(k as f64);
        let ln_mag = kr * ln_abs - (kr * beta_r + R::one()).ln_gamma();
        let mag = ln_mag.exp();
        let term = if x < 0.0 && k % 2 == 1 { -mag } else { mag };
        acc.add(term);
        let mag_f = mag.to_f64();
        if !mag_f.is_finite() {
            return Err(Error::NonConvergence {
                terms: k,
                reason: "series terms overflow",
            });
        }
        // exp() turns the absolute error of ln_mag into a relative error.
        rounding += mag_f * R::EPSILON * (libm::fabs(ln_mag.to_f64()) + 4.0);
        let partial = acc.value().to_f64();
        if mag_f < tol * libm::fabs(partial) {
            small_run += 1;
            if small_run == 2 {
                rounding += R::EPSILON * libm::fabs(partial) * (k as f64).max(1.0);
                return Ok(MlValue {
                    value: partial,
                    rounding,
                    terms: k + 1,
                    precision: precision_of::<R>(),
                });
            }
        } else {
            small_run = 0;
        }
    }
    Err(Error::NonConvergence {
        terms: cap,
        reason: "stopping rule not met within the term cap",
    })
}

fn precision_of<R: Real>() -> Precision {
    if R::EPSILON < f64::EPSILON / 4.0 {
        Precision::DoubleDouble
    } else {
        Precision::Native
    }
}

/// Terms `x^k / Γ(k beta + 1)` of the Mittag-Leffler series, `k = 0, 1, ...`.
pub fn ml_terms(beta: MlOrder, x: f64) -> impl Iterator<Item = f64> {
    let b = beta.get();
    (0usize..).map(move |k| {
        if k == 0 {
            return 1.0;
        }
        let mag = libm::exp(k as f64 * libm::log(libm::fabs(x)) - libm::lgamma_r(k as f64 * b + 1.0).0);
        if x < 0.0 && k % 2 == 1 {
            -mag
        } else {
            mag
        }
    })
}
