//! Compensated summation.

use crate::real::Real;

/// Neumaier's variant of Kahan summation.
///
/// Unlike plain Kahan summation it stays exact when an addend is larger in
/// magnitude than the running sum, which is the common case for alternating
/// series whose terms grow before they decay.
#[derive(Debug, Clone, Copy)]
pub struct CompensatedSum<R = f64> {
    sum: R,
    comp: R,
}

impl<R: Real> Default for CompensatedSum<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> CompensatedSum<R> {
    pub fn new() -> Self {
        CompensatedSum {
            sum: R::zero(),
            comp: R::zero(),
        }
    }

    pub fn add(&mut self, x: R) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp + ((self.sum - t) + x);
        } else {
            self.comp = self.comp + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    pub fn value(&self) -> R {
        self.sum + self.comp
    }
}

impl<R: Real> Extend<R> for CompensatedSum<R> {
    fn extend<I: IntoIterator<Item = R>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

/// Compensated sum of an iterator of `f64`.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(iter);
    acc.value()
}
