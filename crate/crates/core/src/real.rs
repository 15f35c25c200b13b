//! Working-precision scalars.
//!
//! Series code is written once against [`Real`] and instantiated with `f64`
//! (native precision) or [`DoubleDouble`] (about 106 significant bits), which
//! backs the extended summation mode.

use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Arithmetic and elementary functions needed by the series kernels.
pub trait Real:
    Copy
    + fmt::Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Unit roundoff of the representation.
    const EPSILON: f64;

    fn from_f64(x: f64) -> Self;
    /// Nearest representable value of an integer.
    fn from_u128(x: u128) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// `ln Γ(x)` for `x > 0`.
    fn ln_gamma(self) -> Self;

    fn abs(self) -> Self {
        if self < Self::from_f64(0.0) {
            -self
        } else {
            self
        }
    }

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    const EPSILON: f64 = f64::EPSILON / 2.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn from_u128(x: u128) -> Self {
        x as f64
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        libm::exp(self)
    }
    fn ln(self) -> Self {
        libm::log(self)
    }
    fn ln_gamma(self) -> Self {
        libm::lgamma_r(self).0
    }
    fn abs(self) -> Self {
        libm::fabs(self)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN2: DoubleDouble = DoubleDouble::from_parts(0.6931471805599453, 2.3190468138462996e-17);
const HALF_LN_2PI: DoubleDouble =
    DoubleDouble::from_parts(0.9189385332046728, -3.8782941580672414e-17);

// B_{2m} as numerator/denominator, m = 1..=15.
const BERNOULLI: [(f64, f64); 15] = [
    (1.0, 6.0),
    (-1.0, 30.0),
    (1.0, 42.0),
    (-1.0, 30.0),
    (5.0, 66.0),
    (-691.0, 2730.0),
    (7.0, 6.0),
    (-3617.0, 510.0),
    (43867.0, 798.0),
    (-174611.0, 330.0),
    (854513.0, 138.0),
    (-236364091.0, 2730.0),
    (8553103.0, 6.0),
    (-23749461029.0, 870.0),
    (8615841276005.0, 14322.0),
];

// Stirling's series is used for arguments at or above this value.
const STIRLING_MIN: f64 = 30.0;

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, libm::fma(a, b, -p))
}

impl DoubleDouble {
    pub const fn from_parts(hi: f64, lo: f64) -> Self {
        DoubleDouble { hi, lo }
    }

    pub fn new(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    /// Exact conversion of an integer below `2^106`.
    pub fn from_u128(x: u128) -> Self {
        let hi = x as f64;
        // `hi` may round above `x`; the difference fits in an i128.
        let rem = x as i128 - hi as u128 as i128;
        let (hi, lo) = quick_two_sum(hi, rem as f64);
        DoubleDouble { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite()
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        DoubleDouble { hi, lo }
    }

    fn scale2(self, e: i32) -> Self {
        DoubleDouble {
            hi: libm::scalbn(self.hi, e),
            lo: libm::scalbn(self.lo, e),
        }
    }

    fn sqr(self) -> Self {
        self * self
    }

    /// `e^x - 1` for `|x| <= ln 2 / 2`, accurate near zero.
    fn expm1_reduced(r: Self) -> Self {
        const SQUARINGS: i32 = 10;
        let r = r.scale2(-SQUARINGS);
        // Taylor series for e^r - 1 with |r| < 4e-4.
        let mut term = r;
        let mut sum = r;
        let mut i = 2.0;
        while libm::fabs(term.hi) > 1e-36 * libm::fabs(sum.hi).max(1e-300) {
            term = term * r / DoubleDouble::new(i);
            sum = sum + term;
            i += 1.0;
            if i > 40.0 {
                break;
            }
        }
        // (1 + s)^2 - 1 = 2s + s^2
        for _ in 0..SQUARINGS {
            sum = sum.scale2(1) + sum.sqr();
        }
        sum
    }

    /// `ln Γ(x)` for `x >= STIRLING_MIN`.
    fn ln_gamma_stirling(x: Self) -> Self {
        let ln_x = x.ln();
        let mut acc = (x - DoubleDouble::new(0.5)) * ln_x - x + HALF_LN_2PI;
        let inv = DoubleDouble::new(1.0) / x;
        let inv2 = inv * inv;
        let mut pow = inv;
        for (m, &(num, den)) in BERNOULLI.iter().enumerate() {
            let m = (m + 1) as f64;
            let coef = DoubleDouble::new(num) / (DoubleDouble::new(den) * DoubleDouble::new(2.0 * m * (2.0 * m - 1.0)));
            acc = acc + coef * pow;
            pow = pow * inv2;
        }
        acc
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DoubleDouble({:e} + {:e})", self.hi, self.lo)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        DoubleDouble { hi, lo }
    }
}

impl AddAssign for DoubleDouble {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let (hi, lo) = quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi));
        DoubleDouble { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        DoubleDouble { hi, lo } + DoubleDouble::new(q3)
    }
}

impl Real for DoubleDouble {
    const EPSILON: f64 = 4.93038065763132e-32; // 2^-104

    fn from_f64(x: f64) -> Self {
        DoubleDouble::new(x)
    }

    fn from_u128(x: u128) -> Self {
        DoubleDouble::from_u128(x)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.78 {
            return DoubleDouble::new(f64::INFINITY);
        }
        if self.hi < -745.2 {
            return DoubleDouble::new(0.0);
        }
        let k = libm::round(self.hi / LN2.hi);
        let r = self - LN2.mul_f64(k);
        let e = DoubleDouble::expm1_reduced(r) + DoubleDouble::new(1.0);
        e.scale2(k as i32)
    }

    fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return DoubleDouble::new(f64::NAN);
        }
        if self.hi.is_infinite() {
            return self;
        }
        // One Newton step on exp(y) = x from the f64 estimate.
        let y = DoubleDouble::new(libm::log(self.hi));
        y + self * (-y).exp() - DoubleDouble::new(1.0)
    }

    fn ln_gamma(self) -> Self {
        if self.hi <= 0.0 {
            return DoubleDouble::new(f64::NAN);
        }
        if self.hi >= STIRLING_MIN {
            return DoubleDouble::ln_gamma_stirling(self);
        }
        // Γ(x) = Γ(x + m) / (x (x + 1) ... (x + m - 1))
        let shift = libm::ceil(STIRLING_MIN - self.hi) as usize;
        let mut prod = self;
        for i in 1..shift {
            prod = prod * (self + DoubleDouble::new(i as f64));
        }
        let shifted = self + DoubleDouble::new(shift as f64);
        DoubleDouble::ln_gamma_stirling(shifted) - prod.ln()
    }

    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
}
