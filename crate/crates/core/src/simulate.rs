//! Monte-Carlo with Mittag-Leffler waiting times.
//!
//! Work is split into fixed-size chunks, each driven by its own ChaCha
//! stream derived from `(seed, chunk index)`. Results therefore depend only
//! on the seed and the sample count, never on how chunks are scheduled.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};
use crate::processes::{OrderSequence, ProcessKind, Rates};
use crate::specfun::{ml_eval, MlOrder};

/// Paths or samples per RNG stream.
pub const CHUNK: u64 = 1 << 16;

/// The generator for chunk `stream` of a run seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `(chunk index, size)` covering `samples`.
pub fn chunks(samples: u64) -> impl Iterator<Item = (u64, u64)> {
    let full = samples / CHUNK;
    let rest = samples % CHUNK;
    (0..full)
        .map(|c| (c, CHUNK))
        .chain((rest > 0).then_some((full, rest)))
}

/// Mittag-Leffler waiting times with `Pr{W > t} = E_β(-λ t^β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlSampler {
    beta: MlOrder,
    lambda: f64,
    scale: f64,
}

impl MlSampler {
    pub fn new(beta: MlOrder, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(domain(alloc::format!("rate {lambda} must be positive")));
        }
        let b = beta.get();
        Ok(MlSampler {
            beta,
            lambda,
            scale: libm::pow(lambda, -1.0 / b),
        })
    }

    pub fn beta(&self) -> MlOrder {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `λ^{-1/β} (-ln U) [sin(βπ)/tan(βπV) - cos(βπ)]^{1/β}`; the bracket is
    /// evaluated as `sin(βπ(1-V)) / sin(βπV)`, which is the same quantity
    /// without the cancellation near `V = 1`.
    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> f64 {
        let u: f64 = rng.sample(Open01);
        let e = -libm::log(u);
        if self.beta.is_one() {
            return e / self.lambda;
        }
        let v: f64 = rng.sample(Open01);
        let b = self.beta.get();
        let bracket = libm::sin(b * core::f64::consts::PI * (1.0 - v)) / libm::sin(b * core::f64::consts::PI * v);
        self.scale * e * libm::pow(bracket, 1.0 / b)
    }

    /// The survival function the samples follow.
    pub fn survival(&self, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(1.0);
        }
        ml_eval(self.beta, -self.lambda * libm::pow(t, self.beta.get()), 1e-14)
    }

    /// `Pr{W <= t}` implied by the sampling formula itself: conditional on
    /// `V`, `W` is exponential, so the law is a one-dimensional integral
    /// over `V`. Used to check the formula independently of sampling noise.
    pub fn formula_cdf(&self, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        if self.beta.is_one() {
            return Ok(1.0 - libm::exp(-self.lambda * t));
        }
        let b = self.beta.get();
        let pi = core::f64::consts::PI;
        let f = |v: f64| {
            let bracket = libm::sin(b * pi * (1.0 - v)) / libm::sin(b * pi * v);
            let mean = self.scale * libm::pow(bracket, 1.0 / b);
            if mean > 0.0 {
                libm::exp(-t / mean)
            } else {
                0.0
            }
        };
        let q = crate::quad::integrate(f, 0.0, 1.0, 1e-12)?;
        Ok(1.0 - q.value)
    }
}

/// Event times of one path and the state reached by the horizon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathRecord {
    pub event_times: Vec<f64>,
    pub terminal_state: usize,
    /// State before the first recorded event.
    pub initial_state: usize,
    /// The path ran out of supplied orders before the horizon and was
    /// stopped; `terminal_state` is then a lower bound.
    pub censored: bool,
}

impl PathRecord {
    /// State occupied at time `t` (events at exactly `t` have happened).
    pub fn state_at(&self, t: f64) -> usize {
        self.initial_state + self.event_times.partition_point(|&e| e <= t)
    }
}

/// Path generators with explicit waiting-time constructions.
pub trait PathSimulator {
    fn path<G: Rng + ?Sized>(&self, horizon: f64, rng: &mut G) -> Result<PathRecord>;
}

/// Sojourn samplers for states `first, first + 1, ...`.
#[derive(Debug, Clone)]
struct Sojourns {
    samplers: Vec<MlSampler>,
    first: usize,
    censor: bool,
}

impl Sojourns {
    fn path<G: Rng + ?Sized>(&self, horizon: f64, rng: &mut G) -> Result<PathRecord> {
        let mut rec = PathRecord {
            event_times: Vec::new(),
            terminal_state: self.first,
            initial_state: self.first,
            censored: false,
        };
        let mut clock = 0.0;
        for (i, s) in self.samplers.iter().enumerate() {
            clock += s.sample(rng);
            if clock > horizon {
                rec.terminal_state = self.first + i;
                return Ok(rec);
            }
            rec.event_times.push(clock);
        }
        if self.censor {
            rec.terminal_state = self.first + self.samplers.len();
            rec.censored = true;
            return Ok(rec);
        }
        Err(Error::OrdersExhausted {
            state: self.first + self.samplers.len(),
            supplied: self.samplers.len(),
        })
    }
}

/// SDTFPP-II: independent waiting times `W_n ~ ML(β_n, λ)`, state 0 at
/// time 0.
#[derive(Debug, Clone)]
pub struct Sdtfpp2Simulator(Sojourns);

impl Sdtfpp2Simulator {
    pub fn new(params: &OrderSequence) -> Result<Self> {
        let Rates::Common(lambda) = params.rates() else {
            return Err(domain("sdtfpp2 simulation takes a single rate"));
        };
        let samplers = params
            .orders()
            .iter()
            .map(|&b| MlSampler::new(b, *lambda))
            .collect::<Result<_>>()?;
        Ok(Sdtfpp2Simulator(Sojourns {
            samplers,
            first: 0,
            censor: false,
        }))
    }

    /// Stops paths that outrun the supplied orders instead of failing. The
    /// last state then collects everything at or above it, and the
    /// occupation of every lower state is unaffected.
    pub fn censored(mut self) -> Self {
        self.0.censor = true;
        self
    }
}

impl PathSimulator for Sdtfpp2Simulator {
    fn path<G: Rng + ?Sized>(&self, horizon: f64, rng: &mut G) -> Result<PathRecord> {
        self.0.path(horizon, rng)
    }
}

/// SDFPBP: sojourn in state `n` is `ML(ν_n, λ_n)`; the process starts in
/// state 1 at time 0 and that first event is not recorded.
#[derive(Debug, Clone)]
pub struct SdfpbpSimulator(Sojourns);

impl SdfpbpSimulator {
    pub fn new(params: &OrderSequence) -> Result<Self> {
        let samplers = params
            .orders()
            .iter()
            .enumerate()
            .map(|(j, &nu)| match params.rates() {
                Rates::PerState(r) if j < r.len() => MlSampler::new(nu, r[j]),
                Rates::PerState(_) => Err(domain("fewer rates than orders")),
                Rates::Common(_) => Err(domain("sdfpbp simulation needs one rate per state")),
            })
            .collect::<Result<_>>()?;
        Ok(SdfpbpSimulator(Sojourns {
            samplers,
            first: 1,
            censor: false,
        }))
    }

    /// See [`Sdtfpp2Simulator::censored`].
    pub fn censored(mut self) -> Self {
        self.0.censor = true;
        self
    }
}

impl PathSimulator for SdfpbpSimulator {
    fn path<G: Rng + ?Sized>(&self, horizon: f64, rng: &mut G) -> Result<PathRecord> {
        self.0.path(horizon, rng)
    }
}

pub fn simulate_sdtfpp2<G: Rng + ?Sized>(params: &OrderSequence, horizon: f64, rng: &mut G) -> Result<PathRecord> {
    Sdtfpp2Simulator::new(params)?.path(horizon, rng)
}

pub fn simulate_sdfpbp<G: Rng + ?Sized>(params: &OrderSequence, horizon: f64, rng: &mut G) -> Result<PathRecord> {
    SdfpbpSimulator::new(params)?.path(horizon, rng)
}

/// A Monte-Carlo probability with its 3σ binomial half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub half_width: f64,
    pub samples: u64,
}

impl McEstimate {
    pub fn from_counts(hits: u64, samples: u64) -> Self {
        let n = samples as f64;
        let p = if samples == 0 { 0.0 } else { hits as f64 / n };
        McEstimate {
            estimate: p,
            half_width: 3.0 * libm::sqrt(p * (1.0 - p) / n.max(1.0)),
            samples,
        }
    }
}

/// Occupation counts of paths at a set of observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct StateHistogram {
    times: Vec<f64>,
    counts: Vec<Vec<u64>>,
    paths: u64,
}

impl StateHistogram {
    pub fn new(times: &[f64]) -> Self {
        StateHistogram {
            times: times.to_vec(),
            counts: vec![Vec::new(); times.len()],
            paths: 0,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn paths(&self) -> u64 {
        self.paths
    }

    pub fn record(&mut self, path: &PathRecord) {
        for (i, &t) in self.times.iter().enumerate() {
            let s = path.state_at(t);
            let c = &mut self.counts[i];
            if c.len() <= s {
                c.resize(s + 1, 0);
            }
            c[s] += 1;
        }
        self.paths += 1;
    }

    /// Adds the counts of `other`, which must share the observation times.
    pub fn merge(&mut self, other: &StateHistogram) {
        debug_assert_eq!(self.times, other.times);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            if a.len() < b.len() {
                a.resize(b.len(), 0);
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.paths += other.paths;
    }

    pub fn count(&self, time_index: usize, state: usize) -> u64 {
        self.counts[time_index].get(state).copied().unwrap_or(0)
    }

    pub fn estimate(&self, time_index: usize, state: usize) -> McEstimate {
        McEstimate::from_counts(self.count(time_index, state), self.paths)
    }
}

/// Simulates one chunk of paths, optionally keeping them.
pub fn simulate_chunk<S: PathSimulator>(
    sim: &S,
    times: &[f64],
    seed: u64,
    chunk: u64,
    size: u64,
    mut keep: Option<&mut Vec<PathRecord>>,
) -> Result<StateHistogram> {
    let horizon = times.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut rng = rng_stream(seed, chunk);
    let mut hist = StateHistogram::new(times);
    for _ in 0..size {
        let p = sim.path(horizon, &mut rng)?;
        hist.record(&p);
        if let Some(k) = keep.as_deref_mut() {
            k.push(p);
        }
    }
    Ok(hist)
}

/// Simulates `paths` paths chunk by chunk and tallies states at `times`.
pub fn simulate_histogram<S: PathSimulator>(sim: &S, times: &[f64], paths: u64, seed: u64) -> Result<StateHistogram> {
    let mut hist = StateHistogram::new(times);
    for (c, size) in chunks(paths) {
        hist.merge(&simulate_chunk(sim, times, seed, c, size, None)?);
    }
    Ok(hist)
}

/// Estimator built on a factorization of a transform into one survival
/// factor and a product of density factors:
/// `scale * Pr{X_1 + ... + X_m <= t < X_0 + X_1 + ... + X_m}` with
/// independent Mittag-Leffler `X_k`.
///
/// SDTFPP-I: `X_0 ~ ML(α_0, λ)`, `X_k ~ ML(α_k, λ)` for `k = 1..n`, scale 1.
///
/// SDFPBP: `X_0 ~ ML(ν_1, λ_1)`, `X_k ~ ML(ν_{k+1}, λ_{k+1})` for
/// `k = 1..n-1`, scale `λ_1/λ_n`. The sojourn simulator agrees with this only
/// when `ν_n = ν_1`, since its transform carries `s^{ν_n - 1}` instead.
#[derive(Debug, Clone)]
pub struct FactorEstimator {
    survival: MlSampler,
    sum: Vec<MlSampler>,
    scale: f64,
}

impl FactorEstimator {
    pub fn sdtfpp1(params: &OrderSequence, n: usize) -> Result<Self> {
        let Rates::Common(lambda) = params.rates() else {
            return Err(domain("sdtfpp1 takes a single rate"));
        };
        if params.orders().len() < n + 1 {
            return Err(domain(alloc::format!("state {n} needs {} orders", n + 1)));
        }
        let mut samplers = params.orders()[..=n]
            .iter()
            .map(|&a| MlSampler::new(a, *lambda))
            .collect::<Result<Vec<_>>>()?;
        let survival = samplers.remove(0);
        Ok(FactorEstimator {
            survival,
            sum: samplers,
            scale: 1.0,
        })
    }

    pub fn sdfpbp(params: &OrderSequence, n: usize) -> Result<Self> {
        crate::processes::validate(ProcessKind::Sdfpbp, params, n)?;
        let mut samplers = (0..n)
            .map(|j| MlSampler::new(params.orders()[j], params.rate(j)))
            .collect::<Result<Vec<_>>>()?;
        let scale = params.rate(0) / params.rate(n - 1);
        let survival = samplers.remove(0);
        Ok(FactorEstimator {
            survival,
            sum: samplers,
            scale,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Whether one draw satisfies the event at each of `times`.
    pub fn draw<G: Rng + ?Sized>(&self, times: &[f64], rng: &mut G, hits: &mut [u64]) {
        let x0 = self.survival.sample(rng);
        let s: f64 = self.sum.iter().map(|m| m.sample(rng)).sum();
        for (h, &t) in hits.iter_mut().zip(times) {
            if s <= t && t < s + x0 {
                *h += 1;
            }
        }
    }

    /// Hit counts at `times` for one chunk.
    pub fn chunk(&self, times: &[f64], seed: u64, chunk: u64, size: u64) -> Vec<u64> {
        let mut rng = rng_stream(seed, chunk);
        let mut hits = vec![0; times.len()];
        for _ in 0..size {
            self.draw(times, &mut rng, &mut hits);
        }
        hits
    }

    /// Scaled estimate from hit counts.
    pub fn estimate(&self, hits: u64, samples: u64) -> McEstimate {
        let e = McEstimate::from_counts(hits, samples);
        McEstimate {
            estimate: e.estimate * self.scale,
            half_width: e.half_width * self.scale,
            samples,
        }
    }

    fn run(&self, t: f64, samples: u64, seed: u64) -> Result<McEstimate> {
        if samples < 10_000 {
            return Err(domain("at least 10^4 samples are required"));
        }
        let hits: u64 = chunks(samples).map(|(c, size)| self.chunk(&[t], seed, c, size)[0]).sum();
        Ok(self.estimate(hits, samples))
    }
}

pub fn estimate_sdtfpp1(params: &OrderSequence, n: usize, t: f64, samples: u64, seed: u64) -> Result<McEstimate> {
    FactorEstimator::sdtfpp1(params, n)?.run(t, samples, seed)
}

pub fn estimate_sdfpbp(params: &OrderSequence, n: usize, t: f64, samples: u64, seed: u64) -> Result<McEstimate> {
    FactorEstimator::sdfpbp(params, n)?.run(t, samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(b: f64) -> MlOrder {
        MlOrder::new(b).unwrap()
    }

    #[test]
    fn exponential_mean() {
        let s = MlSampler::new(MlOrder::ONE, 2.0).unwrap();
        let mut rng = rng_stream(7, 0);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.002);
    }

    #[test]
    fn survival_at_one() {
        let s = MlSampler::new(order(0.7), 1.0).unwrap();
        let mut rng = rng_stream(11, 0);
        let n = 1_000_000u64;
        let hits = (0..n).filter(|_| s.sample(&mut rng) > 1.0).count() as u64;
        let p = s.survival(1.0).unwrap();
        let est = McEstimate::from_counts(hits, n);
        assert!((est.estimate - p).abs() < est.half_width, "{} vs {p}", est.estimate);
    }

    #[test]
    fn formula_law_matches_series() {
        for (b, l) in [(0.3, 1.0), (0.7, 1.0), (0.5, 2.5), (0.95, 0.4)] {
            let s = MlSampler::new(order(b), l).unwrap();
            for t in [0.05, 0.3, 1.0, 2.0] {
                let a = s.formula_cdf(t).unwrap();
                let e = 1.0 - s.survival(t).unwrap();
                assert!((a - e).abs() < 1e-8, "beta {b} lambda {l} t {t}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn reproducible_paths() {
        let p = OrderSequence::common(&[0.5, 0.8, 0.7, 0.9, 0.6, 0.7, 0.8, 0.9, 0.5, 0.6, 0.7, 0.8], 2.0).unwrap();
        let sim = Sdtfpp2Simulator::new(&p).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        simulate_chunk(&sim, &[0.5], 3, 1, 200, Some(&mut a)).unwrap();
        simulate_chunk(&sim, &[0.5], 3, 1, 200, Some(&mut b)).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        simulate_chunk(&sim, &[0.5], 3, 2, 200, Some(&mut c)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn horizon_zero_and_exhaustion() {
        let p = OrderSequence::common(&[0.5], 2.0).unwrap();
        let mut rng = rng_stream(1, 0);
        let r = simulate_sdtfpp2(&p, 0.0, &mut rng).unwrap();
        assert_eq!(r.terminal_state, 0);
        assert!(r.event_times.is_empty());
        let r = simulate_sdtfpp2(&p, 1e12, &mut rng);
        assert!(matches!(r, Err(Error::OrdersExhausted { supplied: 1, .. })));
        let sim = Sdtfpp2Simulator::new(&p).unwrap().censored();
        let r = sim.path(1e12, &mut rng).unwrap();
        assert!(r.censored && r.terminal_state == 1 && r.state_at(1e12) == 1);
    }

    #[test]
    fn birth_paths_start_in_state_one() {
        let p = OrderSequence::per_state(&[0.7, 0.9, 0.8], &[1.0, 2.0, 3.0]).unwrap();
        let mut rng = rng_stream(5, 0);
        let r = simulate_sdfpbp(&p, 0.0, &mut rng).unwrap();
        assert_eq!((r.terminal_state, r.state_at(0.0)), (1, 1));
        let rec = PathRecord {
            event_times: vec![0.5, 1.0],
            terminal_state: 3,
            initial_state: 1,
            censored: false,
        };
        assert_eq!((rec.state_at(0.4), rec.state_at(0.5), rec.state_at(2.0)), (1, 2, 3));
    }

    #[test]
    fn chunking_covers_samples() {
        let v: Vec<_> = chunks(2 * CHUNK + 5).collect();
        assert_eq!(v, vec![(0, CHUNK), (1, CHUNK), (2, 5)]);
        assert_eq!(chunks(0).count(), 0);
    }

    #[test]
    fn sojourn_and_factor_laws_differ_for_birth() {
        // ν = (0.7, 0.9), λ = (1, 2), t = 1, state 2. Sojourn paths realise
        // s^{ν_2 - 1}/((s^{ν_1} + 1)(s^{ν_2} + 2)) = 0.1799565523775921...,
        // the factorized estimator the series value 0.2080201152381307...
        let p = OrderSequence::per_state(&[0.7, 0.9], &[1.0, 2.0]).unwrap();
        let sim = SdfpbpSimulator::new(&p).unwrap().censored();
        let hist = simulate_histogram(&sim, &[1.0], 400_000, 9).unwrap();
        let e = hist.estimate(0, 2);
        assert!((e.estimate - 0.179_956_552_377_592_1).abs() < e.half_width, "{e:?}");
        let f = estimate_sdfpbp(&p, 2, 1.0, 400_000, 9).unwrap();
        assert!((f.estimate - 0.208_020_115_238_130_7).abs() < f.half_width, "{f:?}");
        assert_eq!(FactorEstimator::sdfpbp(&p, 2).unwrap().scale(), 0.5);
    }
}
