//! Adomian decomposition stages as exact fractional polynomials.
//!
//! For the linear equations at hand every stage `p_k(n, t)` is a finite sum
//! `sum c_i t^{rho_i}`, and the recursions only apply Riemann-Liouville
//! integrals and linear combinations, both closed on this class.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{domain, Error, Result};
use crate::processes::{OrderSequence, ProcessKind};
use crate::sum::CompensatedSum;

/// Exponents closer than this are merged.
pub const MERGE_TOL: f64 = 1e-12;

/// `sum c_i t^{rho_i}` with distinct nonnegative exponents in increasing order
/// and nonzero coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FracPoly {
    terms: Vec<(f64, f64)>,
}

impl FracPoly {
    pub fn zero() -> Self {
        FracPoly { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        FracPoly::from_sorted(alloc::vec![(0.0, c)])
    }

    pub fn monomial(coef: f64, rho: f64) -> Result<Self> {
        FracPoly::from_terms([(rho, coef)])
    }

    /// Builds from `(exponent, coefficient)` pairs in any order, merging
    /// exponents within [`MERGE_TOL`].
    pub fn from_terms<I: IntoIterator<Item = (f64, f64)>>(terms: I) -> Result<Self> {
        let mut v: Vec<(f64, f64)> = terms.into_iter().collect();
        for &(rho, c) in &v {
            if !(rho >= 0.0) || !rho.is_finite() || !c.is_finite() {
                return Err(domain(alloc::format!("invalid term {c} t^{rho}")));
            }
        }
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(FracPoly::from_sorted(v))
    }

    fn from_sorted(v: Vec<(f64, f64)>) -> Self {
        let mut out: Vec<(f64, CompensatedSum)> = Vec::with_capacity(v.len());
        for (rho, c) in v {
            match out.last_mut() {
                Some((r, acc)) if rho - *r <= MERGE_TOL => acc.add(c),
                _ => {
                    let mut acc = CompensatedSum::new();
                    acc.add(c);
                    out.push((rho, acc));
                }
            }
        }
        FracPoly {
            terms: out
                .into_iter()
                .map(|(r, acc)| (r, acc.value()))
                .filter(|&(_, c)| c != 0.0)
                .collect(),
        }
    }

    pub fn terms(&self) -> &[(f64, f64)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = CompensatedSum::new();
        for &(rho, c) in &self.terms {
            acc.add(if rho == 0.0 { c } else { c * libm::pow(t, rho) });
        }
        acc.value()
    }

    pub fn scale(&self, s: f64) -> FracPoly {
        if s == 0.0 {
            return FracPoly::zero();
        }
        FracPoly {
            terms: self.terms.iter().map(|&(r, c)| (r, c * s)).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &FracPoly, b: f64) -> FracPoly {
        let mut v = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        while i < self.len() || j < other.len() {
            let take_left = j == other.len() || (i < self.len() && self.terms[i].0 <= other.terms[j].0);
            if take_left {
                v.push((self.terms[i].0, a * self.terms[i].1));
                i += 1;
            } else {
                v.push((other.terms[j].0, b * other.terms[j].1));
                j += 1;
            }
        }
        FracPoly::from_sorted(v)
    }

    pub fn add(&self, other: &FracPoly) -> FracPoly {
        self.combine(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &FracPoly) -> FracPoly {
        self.combine(1.0, other, -1.0)
    }

    /// Termwise comparison: same exponents within [`MERGE_TOL`] and
    /// coefficients within `rel_tol` of the larger magnitude.
    pub fn approx_eq(&self, other: &FracPoly, rel_tol: f64) -> bool {
        self.len() == other.len()
            && self.terms.iter().zip(&other.terms).all(|(&(ra, ca), &(rb, cb))| {
                libm::fabs(ra - rb) <= MERGE_TOL && libm::fabs(ca - cb) <= rel_tol * libm::fabs(ca).max(libm::fabs(cb))
            })
    }
}

fn gamma_ratio(rho: f64, shift: f64) -> f64 {
    // Γ(rho + 1) / Γ(rho + shift + 1), both arguments positive.
    libm::exp(libm::lgamma_r(rho + 1.0).0 - libm::lgamma_r(rho + shift + 1.0).0)
}

fn check_order(order: f64, upper_open: bool) -> Result<()> {
    let ok = order > 0.0 && if upper_open { order < 1.0 } else { order <= 1.0 };
    if ok {
        Ok(())
    } else {
        Err(domain(alloc::format!("operator order {order} out of range")))
    }
}

/// `I^order`: `c t^rho -> c Γ(rho+1)/Γ(rho+order+1) t^{rho+order}`.
pub fn rl_integral(p: &FracPoly, order: f64) -> Result<FracPoly> {
    check_order(order, false)?;
    Ok(FracPoly::from_sorted(
        p.terms.iter().map(|&(r, c)| (r + order, c * gamma_ratio(r, order))).collect(),
    ))
}

/// `D^order = d/dt I^{1-order}`: `c t^rho -> c Γ(rho+1)/Γ(rho-order+1) t^{rho-order}`.
pub fn rl_derivative(p: &FracPoly, order: f64) -> Result<FracPoly> {
    check_order(order, true)?;
    let mut v = Vec::with_capacity(p.len());
    for &(r, c) in &p.terms {
        let e = r - order;
        if e < 0.0 {
            return Err(Error::NegativeExponent { exponent: e });
        }
        v.push((e, c * gamma_ratio(r, -order)));
    }
    Ok(FracPoly::from_sorted(v))
}

/// Memoized stages `p_k(n, t)` of one process.
///
/// Stages are cached in a private map behind `&mut self`, so an engine is
/// used from one thread at a time; build one engine per thread to
/// parallelize.
#[derive(Debug, Clone)]
pub struct AdmEngine {
    kind: ProcessKind,
    params: OrderSequence,
    first: usize,
    memo: BTreeMap<(usize, usize), FracPoly>,
}

impl AdmEngine {
    /// Special cases are rewritten to their base process up to state `max_n`.
    pub fn new(kind: ProcessKind, params: &OrderSequence, max_n: usize) -> Result<Self> {
        let (kind, params) = kind.canonical(params, max_n.max(kind.first_state()))?;
        Ok(AdmEngine {
            kind,
            first: kind.first_state(),
            params,
            memo: BTreeMap::new(),
        })
    }

    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    /// Stage `k` of state `n`.
    pub fn stage(&mut self, n: usize, k: usize) -> Result<&FracPoly> {
        if n < self.first {
            return Err(domain(alloc::format!("state {n} below the initial state")));
        }
        let width = match self.kind {
            ProcessKind::Sdfpbp => n,
            _ => n + 1,
        };
        if self.params.orders().len() < width {
            return Err(domain(alloc::format!("no order supplied for state {n}")));
        }
        // Fill (m, j) for m <= n, j <= k in increasing j.
        for j in 0..=k {
            for m in self.first..=n {
                if !self.memo.contains_key(&(m, j)) {
                    let p = self.compute(m, j)?;
                    self.memo.insert((m, j), p);
                }
            }
        }
        Ok(&self.memo[&(n, k)])
    }

    fn get(&self, m: usize, j: usize) -> Option<&FracPoly> {
        if m < self.first {
            None
        } else {
            self.memo.get(&(m, j))
        }
    }

    fn compute(&self, m: usize, j: usize) -> Result<FracPoly> {
        if j == 0 {
            return Ok(if m == self.first {
                FracPoly::constant(1.0)
            } else {
                FracPoly::zero()
            });
        }
        let zero = FracPoly::zero();
        let same = self.get(m, j - 1).unwrap_or(&zero);
        let below = if m > self.first {
            self.get(m - 1, j - 1).unwrap_or(&zero)
        } else {
            &zero
        };
        let p = &self.params;
        match self.kind {
            ProcessKind::Sdtfpp1 => {
                // -λ I^{α_m} (p_{j-1}(m) - p_{j-1}(m-1))
                rl_integral(&same.sub(below), p.order(m)).map(|q| q.scale(-p.rate(0)))
            }
            ProcessKind::Sdtfpp2 => {
                // -λ (I^{β_m} p_{j-1}(m) - I^{β_{m-1}} p_{j-1}(m-1))
                let a = rl_integral(same, p.order(m))?;
                let b = if m > 0 {
                    rl_integral(below, p.order(m - 1))?
                } else {
                    FracPoly::zero()
                };
                Ok(a.combine(-p.rate(0), &b, p.rate(0)))
            }
            ProcessKind::Sdfpbp => {
                // I^{ν_m} (-λ_m p_{j-1}(m) + λ_{m-1} p_{j-1}(m-1)); one-based m.
                let lam_below = if m > 1 { p.rate(m - 2) } else { 0.0 };
                let inner = same.combine(-p.rate(m - 1), below, lam_below);
                rl_integral(&inner, p.order(m - 1))
            }
            _ => unreachable!("engine holds a canonical process"),
        }
    }

    /// `sum_{k <= last} p_k(n, ·)`.
    pub fn truncation(&mut self, n: usize, last: usize) -> Result<FracPoly> {
        let mut acc = FracPoly::zero();
        for k in 0..=last {
            acc = acc.add(self.stage(n, k)?);
        }
        Ok(acc)
    }

    /// `sum_{k <= last} p_k(n, t)`.
    pub fn partial_sum(&mut self, n: usize, last: usize, t: f64) -> Result<f64> {
        let mut acc = CompensatedSum::new();
        for k in 0..=last {
            acc.add(self.stage(n, k)?.eval(t));
        }
        Ok(acc.value())
    }
}

/// Stage `k` of state `n` for a fresh engine.
pub fn adm_stage(kind: ProcessKind, params: &OrderSequence, n: usize, k: usize) -> Result<FracPoly> {
    AdmEngine::new(kind, params, n)?.stage(n, k).cloned()
}

/// `sum_{k <= last} p_k(n, t)` for a fresh engine.
pub fn adm_partial_sum(kind: ProcessKind, params: &OrderSequence, n: usize, last: usize, t: f64) -> Result<f64> {
    AdmEngine::new(kind, params, n)?.partial_sum(n, last, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::StateSeries;
    use crate::quad::integrate;

    fn g(x: f64) -> f64 {
        libm::tgamma(x)
    }

    #[test]
    fn integral_examples() {
        let a = 0.37;
        let p = rl_integral(&FracPoly::constant(1.0), a).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p.terms()[0].0 - a).abs() < 1e-15);
        assert!((p.terms()[0].1 - 1.0 / g(a + 1.0)).abs() < 1e-14);
        let q = rl_integral(&FracPoly::monomial(1.0, 1.0).unwrap(), 1.0).unwrap();
        assert_eq!(q.terms(), &[(2.0, 0.5)]);
        let r = rl_integral(&FracPoly::monomial(2.0, 0.5).unwrap(), 0.5).unwrap();
        assert!((r.terms()[0].0 - 1.0).abs() < 1e-15);
        assert!((r.terms()[0].1 - 1.7724538509055159).abs() < 1e-14);
    }

    #[test]
    fn derivative_examples() {
        let a = 0.45;
        let p = FracPoly::monomial(1.0 / g(a + 1.0), a).unwrap();
        let d = rl_derivative(&p, a).unwrap();
        assert!(d.terms()[0].0.abs() < 1e-15 && (d.terms()[0].1 - 1.0).abs() < 1e-14);
        let e = rl_derivative(&FracPoly::monomial(1.0, 1.0).unwrap(), 0.5).unwrap();
        assert!((e.terms()[0].1 - 1.1283791670955126).abs() < 1e-14);
        assert!(matches!(
            rl_derivative(&FracPoly::constant(1.0), 0.5),
            Err(Error::NegativeExponent { .. })
        ));
        assert!(rl_derivative(&p, 1.0).is_err());
        assert!(rl_integral(&p, 0.0).is_err());
    }

    #[test]
    fn integral_matches_quadrature_of_definition() {
        let t = 1.3;
        for rho in [0.0, 0.5, 1.0, 2.3] {
            for a in [0.3, 0.5, 0.9, 1.0] {
                let exact = rl_integral(&FracPoly::monomial(1.0, rho).unwrap(), a).unwrap().eval(t);
                // Substituting u = (t - s)^a removes the endpoint singularity.
                let f = |u: f64| {
                    let s = t - libm::pow(u, 1.0 / a);
                    libm::pow(s.max(0.0), rho) / (a * g(a))
                };
                let q = integrate(f, 0.0, libm::pow(t, a), 1e-12).unwrap();
                assert!((q.value - exact).abs() < 1e-8, "rho={rho} a={a}: {} vs {exact}", q.value);
            }
        }
    }

    #[test]
    fn merging_and_cancellation() {
        let p = FracPoly::from_terms([(0.5, 1.0), (0.5 + 1e-14, 2.0), (1.0, 3.0), (1.0, -3.0)]).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p.terms()[0].1 - 3.0).abs() < 1e-15);
        assert!(FracPoly::from_terms([(-0.1, 1.0)]).is_err());
        let q = p.sub(&p);
        assert!(q.is_zero());
    }

    #[test]
    fn stage_examples() {
        let (a0, lam) = (0.7, 1.6);
        let p = OrderSequence::common(&[a0, 0.4, 0.9], lam).unwrap();
        let s = adm_stage(ProcessKind::Sdtfpp1, &p, 0, 2).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s.terms()[0].0 - 2.0 * a0).abs() < 1e-15);
        assert!((s.terms()[0].1 - lam * lam / g(2.0 * a0 + 1.0)).abs() < 1e-13);
        assert!(adm_stage(ProcessKind::Sdtfpp1, &p, 2, 1).unwrap().is_zero());
        let b = OrderSequence::per_state(&[0.6, 0.85], &[1.0, 2.5]).unwrap();
        let s = adm_stage(ProcessKind::Sdfpbp, &b, 2, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s.terms()[0].0 - 0.85).abs() < 1e-15 && (s.terms()[0].1 - 1.0 / g(1.85)).abs() < 1e-14);
        assert!(adm_stage(ProcessKind::Sdfpbp, &b, 0, 1).is_err());
    }

    #[test]
    fn partial_sum_examples() {
        let one = OrderSequence::common(&[1.0, 1.0], 1.0).unwrap();
        assert!(adm_partial_sum(ProcessKind::Sdtfpp1, &one, 0, 1, 1.0).unwrap().abs() < 1e-15);
        assert!(adm_partial_sum(ProcessKind::Sdtfpp2, &one, 1, 2, 1.0).unwrap().abs() < 1e-15);
        assert_eq!(adm_partial_sum(ProcessKind::Sdtfpp2, &one, 1, 0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn stages_equal_series_blocks() {
        let cases = [
            (ProcessKind::Sdtfpp1, OrderSequence::common(&[0.9, 0.6, 0.75, 0.5], 1.2).unwrap()),
            (ProcessKind::Sdtfpp2, OrderSequence::common(&[0.5, 0.8, 0.7, 0.9], 2.0).unwrap()),
            (
                ProcessKind::Sdfpbp,
                OrderSequence::per_state(&[0.7, 0.9, 0.8, 0.6], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            ),
            (ProcessKind::Sdlbp, OrderSequence::common(&[0.7, 0.9, 0.8], 0.5).unwrap()),
            (ProcessKind::Tfpp, OrderSequence::common(&[0.6], 1.1).unwrap()),
        ];
        for (kind, p) in cases {
            let mut eng = AdmEngine::new(kind, &p, 3).unwrap();
            for n in kind.first_state()..=3 {
                let mut s = StateSeries::new(kind, &p, n).unwrap();
                for k in 0..12 {
                    let stage = eng.stage(n, k).unwrap().clone();
                    let block = FracPoly::from_terms(s.block_terms(k).unwrap()).unwrap();
                    assert!(stage.approx_eq(&block, 1e-12), "{kind} n={n} k={k}");
                }
            }
        }
    }
}
