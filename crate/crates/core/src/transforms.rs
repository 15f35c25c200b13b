//! Closed-form Laplace transforms, forward numerical transforms and
//! fixed-Talbot inversion.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{domain, Error, Result};
use crate::processes::{OrderSequence, ProcessKind};
use crate::quad::integrate;

/// Default number of Talbot contour nodes.
///
/// The node weights grow like `exp(2M/5)`, so in double precision roundoff
/// rather than discretization limits accuracy beyond roughly 32 nodes.
pub const DEFAULT_TALBOT_POINTS: usize = 32;

/// The transform of one state of one process.
#[derive(Debug, Clone)]
pub struct LtClosedForm {
    kind: ProcessKind,
    orders: Vec<f64>,
    rates: Vec<f64>,
    n: usize,
}

impl LtClosedForm {
    /// Special cases are mapped to their base process.
    pub fn new(kind: ProcessKind, params: &OrderSequence, n: usize) -> Result<Self> {
        let (base, p) = kind.canonical(params, n)?;
        let width = if base == ProcessKind::Sdfpbp { n } else { n + 1 };
        Ok(LtClosedForm {
            kind: base,
            orders: (0..width).map(|j| p.order(j)).collect(),
            rates: (0..width).map(|j| p.rate(j)).collect(),
            n,
        })
    }

    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    /// The transform anywhere off the branch cut, principal branch of `s^a`.
    fn value(&self, s: Complex64) -> Complex64 {
        let pw = |a: f64| if a == 1.0 { s } else { s.powf(a) };
        let mut den = Complex64::new(1.0, 0.0);
        for (&a, &l) in self.orders.iter().zip(&self.rates) {
            den *= pw(a) + l;
        }
        let n = self.n;
        let num = match self.kind {
            ProcessKind::Sdtfpp1 => pw(self.orders[0]) / s * libm::pow(self.rates[0], n as f64),
            ProcessKind::Sdtfpp2 => pw(self.orders[n]) / s * libm::pow(self.rates[0], n as f64),
            _ => {
                let prod: f64 = self.rates[..n - 1].iter().product();
                pw(self.orders[0]) / s * prod
            }
        };
        num / den
    }

    /// Poles on the principal sheet: `s^a = -λ` has a solution there only
    /// for `a = 1`.
    fn poles(&self) -> impl Iterator<Item = f64> + '_ {
        self.orders
            .iter()
            .zip(&self.rates)
            .filter(|(&a, _)| a == 1.0)
            .map(|(_, &l)| -l)
    }
}

/// The closed-form transform at `s` with `Re s > 0`.
pub fn lt_eval(form: &LtClosedForm, s: Complex64) -> Result<Complex64> {
    if !(s.re > 0.0) || !s.im.is_finite() {
        return Err(domain(alloc::format!("transform needs Re(s) > 0, got {s}")));
    }
    Ok(form.value(s))
}

/// `∫_0^{t_max} f(t) e^{-st} dt`, with the tail beyond `t_max` bounded by
/// `e^{-s t_max}/s` for `|f| <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtEstimate {
    pub value: f64,
    pub quad_error: f64,
    pub tail_bound: f64,
}

pub fn forward_lt<F: FnMut(f64) -> f64>(mut f: F, s: f64, t_max: f64, quad_tol: f64) -> Result<LtEstimate> {
    if !(s > 0.0) || !(t_max > 0.0) || !(quad_tol > 0.0) {
        return Err(domain("forward_lt needs s, t_max and quad_tol positive"));
    }
    let q = integrate(|t| f(t) * libm::exp(-s * t), 0.0, t_max, quad_tol)?;
    Ok(LtEstimate {
        value: q.value,
        quad_error: q.error,
        tail_bound: libm::exp(-s * t_max) / s,
    })
}

/// Fixed-Talbot inversion of `form` at `t > 0` with `points` contour nodes.
///
/// A pole closer to the contour than half the local node spacing degrades
/// the rule; the node count is doubled up to twice and
/// [`Error::PoleProximity`] is returned if that does not help.
pub fn talbot_invert(form: &LtClosedForm, t: f64, points: usize) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(domain(alloc::format!("inversion needs t > 0, got {t}")));
    }
    if points < 16 {
        return Err(domain("at least 16 contour points are required"));
    }
    let mut m = points;
    for _ in 0..3 {
        match pole_distance(form, t, m) {
            Some(d) if d < 0.5 => m *= 2,
            _ => return Ok(talbot_sum(|s| form.value(s), t, m)),
        }
    }
    Err(Error::PoleProximity {
        distance: pole_distance(form, t, m).unwrap_or(0.0),
    })
}

fn node(r: f64, theta: f64) -> Complex64 {
    let cot = libm::cos(theta) / libm::sin(theta);
    Complex64::new(r * theta * cot, r * theta)
}

/// Smallest distance from a pole to a node, in units of the spacing of
/// the nodes adjacent to it.
fn pole_distance(form: &LtClosedForm, t: f64, m: usize) -> Option<f64> {
    let r = 2.0 * m as f64 / (5.0 * t);
    let nodes: Vec<Complex64> = (1..m)
        .map(|k| node(r, k as f64 * core::f64::consts::PI / m as f64))
        .collect();
    let mut worst: Option<f64> = None;
    for p in form.poles() {
        let p = Complex64::new(p, 0.0);
        for (i, z) in nodes.iter().enumerate() {
            let spacing = if i + 1 < nodes.len() {
                (nodes[i + 1] - z).norm()
            } else {
                (z - nodes[i - 1]).norm()
            };
            let d = (z - p).norm().min((z.conj() - p).norm()) / spacing;
            worst = Some(worst.map_or(d, |w: f64| w.min(d)));
        }
    }
    worst
}

/// Abate-Valkó fixed-Talbot rule for an arbitrary transform.
pub fn talbot_sum<F: Fn(Complex64) -> Complex64>(f: F, t: f64, m: usize) -> f64 {
    let mf = m as f64;
    let r = 2.0 * mf / (5.0 * t);
    let mut acc = 0.5 * f(Complex64::new(r, 0.0)).re * libm::exp(r * t);
    for k in 1..m {
        let theta = k as f64 * core::f64::consts::PI / mf;
        let cot = libm::cos(theta) / libm::sin(theta);
        let s = Complex64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        let w = (s * t).exp() * Complex64::new(1.0, sigma);
        acc += (w * f(s)).re;
    }
    r / mf * acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn form(kind: ProcessKind, p: &OrderSequence, n: usize) -> LtClosedForm {
        LtClosedForm::new(kind, p, n).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let p = OrderSequence::common(&[0.6, 0.8], 1.5).unwrap();
        let s = Complex64::new(0.7, 0.0);
        let v = lt_eval(&form(ProcessKind::Sdtfpp1, &p, 0), s).unwrap();
        let want = libm::pow(0.7, -0.4) / (libm::pow(0.7, 0.6) + 1.5);
        assert!((v.re - want).abs() < 1e-15 && v.im == 0.0);
        let one = OrderSequence::common(&[1.0, 1.0], 1.0).unwrap();
        let v = lt_eval(&form(ProcessKind::Sdtfpp2, &one, 1), Complex64::new(1.0, 0.0)).unwrap();
        assert!((v.re - 0.25).abs() < 1e-16);
        let b = OrderSequence::per_state(&[0.6], &[2.5]).unwrap();
        let v = lt_eval(&form(ProcessKind::Sdfpbp, &b, 1), s).unwrap();
        assert!((v.re - libm::pow(0.7, -0.4) / (libm::pow(0.7, 0.6) + 2.5)).abs() < 1e-15);
        assert!(lt_eval(&form(ProcessKind::Sdfpbp, &b, 1), Complex64::new(0.0, 1.0)).is_err());
    }

    #[test]
    fn versions_differ_for_heterogeneous_orders() {
        let p = OrderSequence::common(&[0.5, 0.8], 1.0).unwrap();
        let s = Complex64::new(1.3, 0.0);
        let a = lt_eval(&form(ProcessKind::Sdtfpp1, &p, 1), s).unwrap();
        let b = lt_eval(&form(ProcessKind::Sdtfpp2, &p, 1), s).unwrap();
        assert!((a - b).norm() > 1e-3);
    }

    #[test]
    fn forward_examples() {
        let r = forward_lt(|t| libm::exp(-t), 1.0, 40.0, 1e-12).unwrap();
        assert!((r.value - 0.5).abs() < 1e-9);
        let r = forward_lt(|_| 1.0, 2.0, 20.0, 1e-12).unwrap();
        assert!((r.value - 0.5).abs() <= r.tail_bound + 1e-12);
        assert!(r.tail_bound < 1e-17);
    }

    #[test]
    fn talbot_poisson_cases() {
        let one = OrderSequence::common(&[1.0; 3], 1.0).unwrap();
        let v = talbot_invert(&form(ProcessKind::Sdtfpp1, &one, 0), 1.0, DEFAULT_TALBOT_POINTS).unwrap();
        assert!((v - libm::exp(-1.0)).abs() < 1e-10);
        let v = talbot_invert(&form(ProcessKind::Sdtfpp2, &one, 2), 1.0, DEFAULT_TALBOT_POINTS).unwrap();
        assert!((v - libm::exp(-1.0) / 2.0).abs() < 1e-10);
        assert!(talbot_invert(&form(ProcessKind::Sdtfpp2, &one, 2), 0.0, 32).is_err());
        assert!(talbot_invert(&form(ProcessKind::Sdtfpp2, &one, 2), 1.0, 8).is_err());
    }
}
