//! State probabilities and densities from the multi-index series.
//!
//! Every process reduces to the same shape,
//!
//! ```text
//! value(t) = sum_{k >= start} sign_k * sum_{terms in block k} exp(ln_mag + rho ln t)
//! ```
//!
//! where all terms of one block share the sign `(-1)^(k + parity)`. A
//! [`StateSeries`] builds blocks lazily and caches them, so evaluating one
//! state at many times (grids, quadrature) pays for the combinatorics once.
//!
//! Positions of a composition that carry the same order and the same rate
//! are interchangeable: only their total multiplicity enters `rho` and the
//! weight. Blocks are therefore built over multiplicity vectors of these
//! classes, each weighted by the number of compositions it stands for. This
//! is what keeps processes with many states but few distinct orders cheap.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::adm::FracPoly;
use crate::compositions::{binomial, slot_count, BoundedCompositions, FamilyKind};
use crate::error::{domain, Error, Result};
use crate::real::{DoubleDouble, Real};
use crate::specfun::MlOrder;
use crate::sum::CompensatedSum;

/// The processes and special cases with a series representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProcessKind {
    Sdtfpp1,
    Sdtfpp2,
    Sdfpbp,
    Tfpp,
    Fpbp,
    Sdlbp,
    ConvUnit,
    ConvGeneral,
}

impl ProcessKind {
    pub const ALL: [ProcessKind; 8] = [
        ProcessKind::Sdtfpp1,
        ProcessKind::Sdtfpp2,
        ProcessKind::Sdfpbp,
        ProcessKind::Tfpp,
        ProcessKind::Fpbp,
        ProcessKind::Sdlbp,
        ProcessKind::ConvUnit,
        ProcessKind::ConvGeneral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProcessKind::Sdtfpp1 => "sdtfpp1",
            ProcessKind::Sdtfpp2 => "sdtfpp2",
            ProcessKind::Sdfpbp => "sdfpbp",
            ProcessKind::Tfpp => "tfpp",
            ProcessKind::Fpbp => "fpbp",
            ProcessKind::Sdlbp => "sdlbp",
            ProcessKind::ConvUnit => "conv-unit",
            ProcessKind::ConvGeneral => "conv-general",
        }
    }

    /// Lowest admissible state index.
    pub fn first_state(self) -> usize {
        match self.family() {
            FamilyKind::Lambda => 1,
            _ => 0,
        }
    }

    /// Whether values are densities of a convolution rather than pmfs.
    pub fn is_density(self) -> bool {
        matches!(self, ProcessKind::ConvUnit | ProcessKind::ConvGeneral)
    }

    /// Whether the process takes one rate per state.
    pub fn per_state_rates(self) -> bool {
        matches!(self, ProcessKind::Sdfpbp | ProcessKind::Fpbp | ProcessKind::ConvGeneral)
    }

    pub(crate) fn family(self) -> FamilyKind {
        match self {
            ProcessKind::Sdtfpp1 | ProcessKind::Tfpp | ProcessKind::ConvUnit => FamilyKind::Theta,
            ProcessKind::Sdtfpp2 => FamilyKind::Omega,
            ProcessKind::Sdfpbp | ProcessKind::Fpbp | ProcessKind::Sdlbp | ProcessKind::ConvGeneral => {
                FamilyKind::Lambda
            }
        }
    }

    /// Rewrites a special case as one of the three base processes whose
    /// recursions and transforms are stated directly, expanding equal orders
    /// and linear rates up to state `n`.
    pub fn canonical(self, params: &OrderSequence, n: usize) -> Result<(ProcessKind, OrderSequence)> {
        validate(self, params, n)?;
        let width = match self.family() {
            FamilyKind::Lambda => n,
            _ => n + 1,
        };
        let orders: Vec<f64> = match self {
            ProcessKind::Tfpp | ProcessKind::Fpbp => vec![params.order(0); width],
            _ => params.orders[..width].iter().map(|o| o.get()).collect(),
        };
        match self {
            ProcessKind::Sdtfpp1 | ProcessKind::Sdtfpp2 | ProcessKind::Sdfpbp => Ok((self, params.clone())),
            ProcessKind::Tfpp => Ok((ProcessKind::Sdtfpp1, OrderSequence::common(&orders, params.rate(0))?)),
            ProcessKind::ConvUnit => Ok((ProcessKind::Sdtfpp1, OrderSequence::common(&orders, 1.0)?)),
            ProcessKind::Fpbp | ProcessKind::ConvGeneral => {
                let rates: Vec<f64> = (0..n).map(|j| params.rate(j)).collect();
                Ok((ProcessKind::Sdfpbp, OrderSequence::per_state(&orders, &rates)?))
            }
            ProcessKind::Sdlbp => {
                let lambda = params.rate(0);
                let rates: Vec<f64> = (1..=n).map(|j| lambda * j as f64).collect();
                Ok((ProcessKind::Sdfpbp, OrderSequence::per_state(&orders, &rates)?))
            }
        }
    }
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProcessKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ProcessKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| domain(alloc::format!("unknown process `{s}`")))
    }
}

/// One rate for every state, or a rate per state.
#[derive(Debug, Clone, PartialEq)]
pub enum Rates {
    Common(f64),
    PerState(Vec<f64>),
}

/// Orders `(a_0, a_1, ...)` and rates of a process.
///
/// Processes indexed from state 1 store `(ν_1, ν_2, ...)` and
/// `(λ_1, λ_2, ...)` zero-based. Sequences may be longer than a particular
/// state needs; the leading entries are used.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderSequence {
    orders: Vec<MlOrder>,
    rates: Rates,
}

impl OrderSequence {
    pub fn common(orders: &[f64], lambda: f64) -> Result<Self> {
        check_rate(lambda)?;
        Ok(OrderSequence {
            orders: to_orders(orders)?,
            rates: Rates::Common(lambda),
        })
    }

    pub fn per_state(orders: &[f64], rates: &[f64]) -> Result<Self> {
        for &r in rates {
            check_rate(r)?;
        }
        Ok(OrderSequence {
            orders: to_orders(orders)?,
            rates: Rates::PerState(rates.to_vec()),
        })
    }

    pub fn orders(&self) -> &[MlOrder] {
        &self.orders
    }

    pub fn rates(&self) -> &Rates {
        &self.rates
    }

    pub fn order(&self, i: usize) -> f64 {
        self.orders[i].get()
    }

    /// Rate at zero-based position `i`; a common rate applies everywhere.
    pub fn rate(&self, i: usize) -> f64 {
        match &self.rates {
            Rates::Common(l) => *l,
            Rates::PerState(r) => r[i],
        }
    }

    fn rate_count(&self) -> usize {
        match &self.rates {
            Rates::Common(_) => usize::MAX,
            Rates::PerState(r) => r.len(),
        }
    }
}

fn to_orders(orders: &[f64]) -> Result<Vec<MlOrder>> {
    orders.iter().map(|&o| MlOrder::new(o)).collect()
}

fn check_rate(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(domain(alloc::format!("rate {r} must be positive and finite")))
    }
}

pub(crate) fn validate(kind: ProcessKind, params: &OrderSequence, n: usize) -> Result<()> {
    if n < kind.first_state() {
        return Err(domain(alloc::format!("{kind} needs n >= {}", kind.first_state())));
    }
    let need_orders = match kind {
        ProcessKind::Tfpp | ProcessKind::Fpbp => 1,
        ProcessKind::Sdtfpp1 | ProcessKind::Sdtfpp2 | ProcessKind::ConvUnit => n + 1,
        _ => n,
    };
    if params.orders.len() < need_orders {
        return Err(domain(alloc::format!(
            "{kind} at n = {n} needs {need_orders} orders, got {}",
            params.orders.len()
        )));
    }
    if kind.per_state_rates() {
        if !matches!(params.rates, Rates::PerState(_)) {
            return Err(domain(alloc::format!("{kind} needs one rate per state")));
        }
        if params.rate_count() < n {
            return Err(domain(alloc::format!(
                "{kind} at n = {n} needs {n} rates, got {}",
                params.rate_count()
            )));
        }
    } else if kind != ProcessKind::ConvUnit && !matches!(params.rates, Rates::Common(_)) {
        return Err(domain(alloc::format!("{kind} takes a single rate")));
    }
    match kind {
        ProcessKind::ConvUnit if params.order(0) != 1.0 => Err(domain("conv-unit needs the first order equal to 1")),
        ProcessKind::ConvGeneral if params.order(0) != 1.0 => Err(domain("conv-general needs ν_1 = 1")),
        ProcessKind::ConvGeneral if params.rate(n - 1) != 1.0 => Err(domain("conv-general needs λ_n = 1")),
        _ => Ok(()),
    }
}

/// Working precision and outer accumulation of the series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SumMode {
    /// Native terms, blocks added naively.
    Plain,
    /// Native terms, blocks added with Neumaier summation.
    #[default]
    Compensated,
    /// Double-double terms and accumulation.
    Extended,
}

impl FromStr for SumMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(SumMode::Plain),
            "compensated" => Ok(SumMode::Compensated),
            "extended" => Ok(SumMode::Extended),
            _ => Err(domain(alloc::format!("unknown summation mode `{s}`"))),
        }
    }
}

/// When to stop the outer series.
///
/// Summation stops after two consecutive blocks that are both below
/// `rel_tol * |partial| + abs_tol` and not growing. At most `k_max` blocks
/// past the first nonzero one are summed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub k_max: usize,
    pub mode: SumMode,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            k_max: 2000,
            mode: SumMode::Compensated,
        }
    }
}

impl TruncationPolicy {
    pub fn new(rel_tol: f64, abs_tol: f64, k_max: usize, mode: SumMode) -> Result<Self> {
        let p = TruncationPolicy {
            rel_tol,
            abs_tol,
            k_max,
            mode,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_mode(mut self, mode: SumMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(domain("rel_tol and abs_tol must be positive"));
        }
        if self.k_max < 1 {
            return Err(domain("k_max must be at least 1"));
        }
        Ok(())
    }
}

/// A truncated series value with its error estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub value: f64,
    /// Last included block plus an estimate of accumulated rounding.
    pub err_est: f64,
    /// Outer index of the last included block.
    pub k_used: usize,
    /// Converged, and `err_est <= max(abs_tol, rel_tol * |value|)`.
    pub reliable: bool,
    /// Advice when the result is unreliable.
    pub note: Option<String>,
}

/// Positions of a composition that share order and rate.
#[derive(Debug, Clone)]
struct Class {
    order: f64,
    weight: f64,
    slots: usize,
    forced: usize,
}

#[derive(Debug, Clone)]
enum Source {
    Classes(Vec<Class>),
    /// Equal-order Poisson case: one term per block.
    Tfpp { alpha: f64, lambda: f64 },
    /// Equal-order birth process, with the composition sum folded into a
    /// complete homogeneous symmetric polynomial of the rates.
    Fpbp { nu: f64, rates: Vec<f64> },
}

/// Terms of one block: `exp(ln_mag + rho ln t)`, all of one sign.
#[derive(Debug, Clone, Default)]
pub(crate) struct Block<R> {
    rho: Vec<R>,
    ln_mag: Vec<R>,
}

/// Upper bound on the terms cached per working precision; a block that
/// would cross it fails with [`Error::NonConvergence`] instead.
pub const MAX_CACHED_TERMS: usize = 1 << 24;

#[derive(Debug, Clone)]
struct Blocks<R> {
    built: Vec<Block<R>>,
    terms: usize,
    /// `h_m(λ/M)` for the leading `j` rates, `j = 1..=n` (equal-order birth process).
    homogeneous: Vec<R>,
}

impl<R: Real> Blocks<R> {
    fn new() -> Self {
        Blocks {
            built: Vec::new(),
            terms: 0,
            homogeneous: Vec::new(),
        }
    }
}

/// The series of one state, with lazily built and cached blocks.
#[derive(Debug, Clone)]
pub struct StateSeries {
    kind: ProcessKind,
    n: usize,
    start: usize,
    /// `ln |prefactor|`.
    ln_pref: f64,
    ln_pref_dd: DoubleDouble,
    /// Sign of block `k` is `(-1)^(k + parity)`.
    parity: usize,
    initial: f64,
    source: Source,
    native: Blocks<f64>,
    extended: Blocks<DoubleDouble>,
}

impl StateSeries {
    pub fn new(kind: ProcessKind, params: &OrderSequence, n: usize) -> Result<Self> {
        validate(kind, params, n)?;
        let family = kind.family();
        let start = crate::compositions::series_start(family, n);
        let parity = match family {
            FamilyKind::Lambda => n - 1,
            _ => n,
        };
        let initial = f64::from(n == kind.first_state());
        // (order, weight, forced) per position, and the prefactor magnitude.
        let mut positions: Vec<(f64, f64, bool)> = Vec::new();
        let mut ln_pref = DoubleDouble::new(0.0);
        let source = match kind {
            ProcessKind::Sdtfpp1 | ProcessKind::ConvUnit => {
                let lambda = if kind == ProcessKind::ConvUnit { 1.0 } else { params.rate(0) };
                for j in 0..=n {
                    positions.push((params.order(j), lambda, j >= 1));
                }
                None
            }
            ProcessKind::Sdtfpp2 => {
                for j in 0..=n {
                    positions.push((params.order(j), params.rate(0), j < n));
                }
                None
            }
            ProcessKind::Sdfpbp | ProcessKind::Sdlbp | ProcessKind::ConvGeneral => {
                let rate = |j: usize| match kind {
                    ProcessKind::Sdlbp => params.rate(0) * (j + 1) as f64,
                    _ => params.rate(j),
                };
                for j in 0..n {
                    positions.push((params.order(j), rate(j), j >= 1));
                }
                ln_pref = DoubleDouble::new(rate(0)).ln() - DoubleDouble::new(rate(n - 1)).ln();
                None
            }
            ProcessKind::Tfpp => Some(Source::Tfpp {
                alpha: params.order(0),
                lambda: params.rate(0),
            }),
            ProcessKind::Fpbp => {
                let rates: Vec<f64> = (0..n).map(|j| params.rate(j)).collect();
                ln_pref = DoubleDouble::new(rates[0]).ln() - DoubleDouble::new(rates[n - 1]).ln();
                Some(Source::Fpbp { nu: params.order(0), rates })
            }
        };
        let source = source.unwrap_or_else(|| Source::Classes(group(&positions)));
        Ok(StateSeries {
            kind,
            n,
            start,
            ln_pref: ln_pref.to_f64(),
            ln_pref_dd: ln_pref,
            parity,
            initial,
            source,
            native: Blocks::new(),
            extended: Blocks::new(),
        })
    }

    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    pub fn state(&self) -> usize {
        self.n
    }

    /// First outer index with a nonempty block.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Number of terms currently cached across all native blocks.
    pub fn cached_terms(&self) -> usize {
        self.native.terms
    }

    /// Number of terms in block `k`, `None` past `u128`.
    pub fn block_len(&self, k: usize) -> Option<u128> {
        if k < self.start {
            return Some(0);
        }
        match &self.source {
            Source::Classes(classes) => {
                let forced: usize = classes.iter().map(|c| c.forced).sum();
                if k < forced {
                    return Some(0);
                }
                let c = classes.len() as u128;
                binomial((k - forced) as u128 + c - 1, c - 1).ok()
            }
            _ => Some(1),
        }
    }

    fn check_budget(&self, cached: usize, k: usize) -> Result<()> {
        match self.block_len(k) {
            Some(len) if cached as u128 + len <= MAX_CACHED_TERMS as u128 => Ok(()),
            _ => Err(Error::NonConvergence {
                terms: cached,
                reason: "the next block exceeds the cached-term budget",
            }),
        }
    }

    /// `(rho, signed coefficient)` pairs of block `k` in native precision.
    pub fn block_terms(&mut self, k: usize) -> Result<Vec<(f64, f64)>> {
        if k < self.start {
            return Ok(Vec::new());
        }
        self.ensure_native(k)?;
        let sign = self.sign(k);
        let b = &self.native.built[k - self.start];
        Ok(b.rho.iter().zip(&b.ln_mag).map(|(&r, &l)| (r, sign * libm::exp(l))).collect())
    }

    /// The truncation `sum_{k <= last} block_k` as a fractional polynomial.
    pub fn truncation_poly(&mut self, last: usize) -> Result<FracPoly> {
        let mut terms = Vec::new();
        for k in self.start..=last {
            terms.extend(self.block_terms(k)?);
        }
        FracPoly::from_terms(terms)
    }

    /// `sum_{k <= last} block_k(t)` with no stopping rule.
    pub fn partial_sum(&mut self, last: usize, t: f64) -> Result<f64> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(if last >= self.start { self.initial } else { 0.0 });
        }
        let mut acc = CompensatedSum::<f64>::new();
        let ln_t = libm::log(t);
        for k in self.start..=last {
            self.ensure_native(k)?;
            let b = &self.native.built[k - self.start];
            let mut inner = CompensatedSum::<f64>::new();
            for (&r, &l) in b.rho.iter().zip(&b.ln_mag) {
                inner.add(libm::exp(l + r * ln_t));
            }
            acc.add(self.sign(k) * inner.value());
        }
        Ok(acc.value())
    }

    /// Evaluates the series at `t` under `policy`.
    pub fn eval(&mut self, t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
        policy.validate()?;
        check_time(t)?;
        if t == 0.0 {
            return Ok(EvalResult {
                value: self.initial,
                err_est: 0.0,
                k_used: self.start,
                reliable: true,
                note: None,
            });
        }
        let mut res = match policy.mode {
            SumMode::Extended => self.sum_with::<DoubleDouble>(t, policy)?.0,
            mode => self.sum_with::<f64>(t, policy).map(|mut r| {
                if mode == SumMode::Plain {
                    r.0.err_est += r.1;
                }
                r.0
            })?,
        };
        let conditioning = self.conditioning(t);
        let flagged = policy.mode == SumMode::Plain && conditioning > 30.0;
        if flagged {
            res.reliable = false;
        }
        if !res.reliable {
            res.note = Some(if res.k_used >= self.start + policy.k_max {
                alloc::format!("stopping rule not met within k_max = {}", policy.k_max)
            } else if policy.mode != SumMode::Extended {
                alloc::format!(
                    "cancellation limits accuracy (rate * t^order up to {conditioning:.3}); use the extended mode"
                )
            } else {
                String::from("cancellation exceeds even the extended precision")
            });
        }
        Ok(res)
    }

    /// `max` over positions of `rate * t^order`, the size of the argument
    /// driving the alternating cancellation.
    pub fn conditioning(&self, t: f64) -> f64 {
        match &self.source {
            Source::Classes(cs) => cs
                .iter()
                .map(|c| c.weight * libm::pow(t, c.order))
                .fold(0.0, f64::max),
            Source::Tfpp { alpha, lambda } => lambda * libm::pow(t, *alpha),
            Source::Fpbp { nu, rates } => rates.iter().fold(0.0, |m: f64, r| m.max(r * libm::pow(t, *nu))),
        }
    }

    fn sign(&self, k: usize) -> f64 {
        if (k + self.parity) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Returns the result and, separately, the rounding of naive outer
    /// accumulation (only charged in plain mode).
    fn sum_with<R: Real>(&mut self, t: f64, policy: &TruncationPolicy) -> Result<(EvalResult, f64)>
    where
        Self: BlockStore<R>,
    {
        let ln_t = R::from_f64(t).ln();
        let plain = policy.mode == SumMode::Plain;
        let mut comp = CompensatedSum::<R>::new();
        let mut naive = R::zero();
        let mut outer_rounding = 0.0;
        let mut rounding = 0.0;
        let mut small_run = 0;
        let mut prev_mag = f64::INFINITY;
        let last_k = self.start + policy.k_max;
        let mut k = self.start;
        loop {
            self.ensure(k)?;
            let block = self.block(k - self.start);
            let mut inner = CompensatedSum::<R>::new();
            let mut inner_rounding = 0.0;
            for (&r, &l) in block.rho.iter().zip(&block.ln_mag) {
                let arg = l + r * ln_t;
                let mag = arg.exp();
                inner.add(mag);
                inner_rounding += mag.to_f64() * (libm::fabs(arg.to_f64()) + 4.0);
            }
            let b = inner.value();
            let b_mag = b.to_f64();
            if !b_mag.is_finite() {
                return Err(Error::NonConvergence {
                    terms: k,
                    reason: "series terms overflow the floating-point range",
                });
            }
            rounding += R::EPSILON * inner_rounding;
            let signed = if self.sign(k) > 0.0 { b } else { -b };
            let partial = if plain {
                naive = naive + signed;
                outer_rounding += R::EPSILON * libm::fabs(naive.to_f64());
                naive.to_f64()
            } else {
                comp.add(signed);
                comp.value().to_f64()
            };
            let threshold = policy.rel_tol * libm::fabs(partial) + policy.abs_tol;
            if b_mag < threshold && b_mag <= prev_mag {
                small_run += 1;
            } else {
                small_run = 0;
            }
            prev_mag = b_mag;
            let converged = small_run >= 2 && k > self.start;
            if converged || k >= last_k {
                let err_est = b_mag + rounding;
                let reliable = converged && err_est <= policy.abs_tol.max(policy.rel_tol * libm::fabs(partial));
                return Ok((
                    EvalResult {
                        value: partial,
                        err_est,
                        k_used: k,
                        reliable,
                        note: None,
                    },
                    outer_rounding,
                ));
            }
            k += 1;
        }
    }

    fn ensure_native(&mut self, k: usize) -> Result<()> {
        <Self as BlockStore<f64>>::ensure(self, k)
    }

    fn build_block<R: Real>(&self, k: usize, ln_pref: R, homogeneous: &mut Vec<R>) -> Result<Block<R>> {
        let mut out = Block {
            rho: Vec::new(),
            ln_mag: Vec::new(),
        };
        match &self.source {
            Source::Classes(classes) => {
                let mins: Vec<usize> = classes.iter().map(|c| c.forced).collect();
                let ln_w: Vec<R> = classes.iter().map(|c| R::from_f64(c.weight).ln()).collect();
                let ord: Vec<R> = classes.iter().map(|c| R::from_f64(c.order)).collect();
                let mut it = BoundedCompositions::new(mins, k);
                while let Some(m) = it.next_slice() {
                    let mut rho = R::zero();
                    let mut ln_mag = ln_pref;
                    for (c, &mc) in m.iter().enumerate() {
                        if mc == 0 {
                            continue;
                        }
                        let mr = R::from_u128(mc as u128);
                        rho = rho + mr * ord[c];
                        ln_mag = ln_mag + mr * ln_w[c];
                        ln_mag = ln_mag + ln_slot_count::<R>(mc, classes[c].slots, classes[c].forced);
                    }
                    ln_mag = ln_mag - (rho + R::one()).ln_gamma();
                    out.rho.push(rho);
                    out.ln_mag.push(ln_mag);
                }
            }
            Source::Tfpp { alpha, lambda } => {
                let kr = R::from_u128(k as u128);
                let rho = kr * R::from_f64(*alpha);
                let ln_mag = ln_pref + kr * R::from_f64(*lambda).ln() + ln_binomial::<R>(k, self.n)
                    - (rho + R::one()).ln_gamma();
                out.rho.push(rho);
                out.ln_mag.push(ln_mag);
            }
            Source::Fpbp { nu, rates } => {
                // Sum over Λ^k_n of prod λ_j^{k_j} = (prod_{j>=2} λ_j) h_m(λ_1..λ_n)
                // with m = k - n + 1; h is advanced one degree per block.
                let n = rates.len();
                let scale = rates.iter().fold(0.0f64, |a, &b| a.max(b));
                let m = k + 1 - n;
                if m == 0 {
                    homogeneous.clear();
                    homogeneous.resize(n, R::one());
                } else {
                    let mut prev = R::zero();
                    for (j, h) in homogeneous.iter_mut().enumerate() {
                        *h = prev + R::from_f64(rates[j]) / R::from_f64(scale) * *h;
                        prev = *h;
                    }
                }
                let h = homogeneous[n - 1];
                let mut ln_rest = R::zero();
                for &r in &rates[1..] {
                    ln_rest = ln_rest + R::from_f64(r).ln();
                }
                let kr = R::from_u128(k as u128);
                let rho = kr * R::from_f64(*nu);
                let ln_mag = ln_pref + ln_rest + R::from_u128(m as u128) * R::from_f64(scale).ln() + h.ln()
                    - (rho + R::one()).ln_gamma();
                out.rho.push(rho);
                out.ln_mag.push(ln_mag);
            }
        }
        Ok(out)
    }
}

/// Storage of blocks in one working precision.
pub(crate) trait BlockStore<R: Real> {
    fn ensure(&mut self, k: usize) -> Result<()>;
    fn block(&self, i: usize) -> &Block<R>;
}

impl BlockStore<f64> for StateSeries {
    fn ensure(&mut self, k: usize) -> Result<()> {
        while self.start + self.native.built.len() <= k {
            let next = self.start + self.native.built.len();
            self.check_budget(self.native.terms, next)?;
            let mut h = core::mem::take(&mut self.native.homogeneous);
            let b = self.build_block::<f64>(next, self.ln_pref, &mut h);
            self.native.homogeneous = h;
            let b = b?;
            self.native.terms += b.rho.len();
            self.native.built.push(b);
        }
        Ok(())
    }
    fn block(&self, i: usize) -> &Block<f64> {
        &self.native.built[i]
    }
}

impl BlockStore<DoubleDouble> for StateSeries {
    fn ensure(&mut self, k: usize) -> Result<()> {
        while self.start + self.extended.built.len() <= k {
            let next = self.start + self.extended.built.len();
            self.check_budget(self.extended.terms, next)?;
            let mut h = core::mem::take(&mut self.extended.homogeneous);
            let b = self.build_block::<DoubleDouble>(next, self.ln_pref_dd, &mut h);
            self.extended.homogeneous = h;
            let b = b?;
            self.extended.terms += b.rho.len();
            self.extended.built.push(b);
        }
        Ok(())
    }
    fn block(&self, i: usize) -> &Block<DoubleDouble> {
        &self.extended.built[i]
    }
}

fn group(positions: &[(f64, f64, bool)]) -> Vec<Class> {
    let mut classes: Vec<Class> = Vec::new();
    for &(order, weight, forced) in positions {
        let found = classes
            .iter_mut()
            .find(|c| c.order.to_bits() == order.to_bits() && c.weight.to_bits() == weight.to_bits());
        match found {
            Some(c) => {
                c.slots += 1;
                c.forced += usize::from(forced);
            }
            None => classes.push(Class {
                order,
                weight,
                slots: 1,
                forced: usize::from(forced),
            }),
        }
    }
    classes
}

fn ln_binomial<R: Real>(n: usize, r: usize) -> R {
    match binomial(n as u128, r as u128) {
        Ok(c) if c < (1u128 << 100) => R::from_u128(c).ln(),
        _ => {
            let one = R::one();
            (R::from_u128(n as u128) + one).ln_gamma()
                - (R::from_u128(r as u128) + one).ln_gamma()
                - (R::from_u128((n - r) as u128) + one).ln_gamma()
        }
    }
}

fn ln_slot_count<R: Real>(m: usize, slots: usize, forced: usize) -> R {
    if slots == 1 {
        return R::zero();
    }
    match slot_count(m, slots, forced) {
        Some(c) if c < (1u128 << 100) => R::from_u128(c).ln(),
        _ => ln_binomial::<R>(m - forced + slots - 1, slots - 1),
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(domain(alloc::format!("time {t} must be finite and nonnegative")))
    }
}

/// Evaluates state `n` of `kind` at `t`.
pub fn pmf(kind: ProcessKind, params: &OrderSequence, n: usize, t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
    StateSeries::new(kind, params, n)?.eval(t, policy)
}

/// SDTFPP-I: `(-1)^n sum_{k>=n} (-λ)^k sum_{Θ^k_n} t^ρ / Γ(1+ρ)`,
/// `ρ = sum k_j α_j`.
pub fn sdtfpp1_pmf(params: &OrderSequence, n: usize, t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
    pmf(ProcessKind::Sdtfpp1, params, n, t, policy)
}

/// SDTFPP-II: as version I with the compositions `Ω^k_n` and orders β.
pub fn sdtfpp2_pmf(params: &OrderSequence, n: usize, t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
    pmf(ProcessKind::Sdtfpp2, params, n, t, policy)
}

/// SDFPBP started in state 1:
/// `(-1)^{n-1} (λ_1/λ_n) sum_{k>=n-1} (-1)^k sum_{Λ^k_n} t^ρ prod λ_j^{k_j} / Γ(1+ρ)`.
pub fn sdfpbp_pmf(params: &OrderSequence, n: usize, t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
    pmf(ProcessKind::Sdfpbp, params, n, t, policy)
}

/// Time fractional Poisson process,
/// `((λt^α)^n/n!) sum_j ((j+n)!/j!) (-λt^α)^j / Γ((j+n)α+1)`.
pub fn tfpp_pmf(alpha: MlOrder, lambda: f64, n: usize, t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
    let params = OrderSequence::common(&[alpha.get()], lambda)?;
    pmf(ProcessKind::Tfpp, &params, n, t, policy)
}

/// Fractional pure birth process with a common order `ν`.
pub fn fpbp_pmf(nu: MlOrder, rates: &[f64], n: usize, t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
    let params = OrderSequence::per_state(&[nu.get()], rates)?;
    pmf(ProcessKind::Fpbp, &params, n, t, policy)
}

/// Linear birth rates `λ_j = λ j`.
pub fn sdlbp_pmf(orders: &[f64], lambda: f64, n: usize, t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
    let params = OrderSequence::common(orders, lambda)?;
    pmf(ProcessKind::Sdlbp, &params, n, t, policy)
}

/// Density of `X_0 + ... + X_n` with `X_j` Mittag-Leffler of order `α_j`
/// and unit scale; `α_0` must be 1.
pub fn conv_ml_density_unit(orders: &[f64], t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
    if orders.is_empty() {
        return Err(domain("at least one order is required"));
    }
    let params = OrderSequence::common(orders, 1.0)?;
    pmf(ProcessKind::ConvUnit, &params, orders.len() - 1, t, policy)
}

/// Density of `Y_1 + ... + Y_n` with `Y_j` Mittag-Leffler of order `ν_j`
/// and rate `λ_j`; requires `ν_1 = λ_n = 1`.
pub fn conv_ml_density_general(orders: &[f64], rates: &[f64], t: f64, policy: &TruncationPolicy) -> Result<EvalResult> {
    if orders.is_empty() || orders.len() != rates.len() {
        return Err(domain("orders and rates must be nonempty and of equal length"));
    }
    let params = OrderSequence::per_state(orders, rates)?;
    pmf(ProcessKind::ConvGeneral, &params, orders.len(), t, policy)
}
