//! The composition index sets that drive every series.
//!
//! All three families are tuples of nonnegative integers with a fixed total
//! `k` where some coordinates must be at least one:
//!
//! | family  | length | coordinates forced `>= 1` | nonempty for |
//! |---------|--------|---------------------------|--------------|
//! | Theta   | n + 1  | `k_1 .. k_n`              | `k >= n`     |
//! | Omega   | n + 1  | `k_0 .. k_{n-1}`          | `k >= n`     |
//! | Lambda  | n      | `k_2 .. k_n`              | `k >= n - 1` |
//!
//! Lambda tuples are stored zero-based, so `parts[0]` is `k_1`.
//!
//! Enumeration is lexicographic and streaming; nothing is materialised.

use alloc::vec::Vec;

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    Theta,
    Omega,
    Lambda,
}

/// One of the sets `Θ^k_n`, `Ω^k_n`, `Λ^k_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IndexFamily {
    pub kind: FamilyKind,
    pub n: usize,
    pub k: usize,
}

impl IndexFamily {
    pub fn new(kind: FamilyKind, n: usize, k: usize) -> Result<Self> {
        if kind == FamilyKind::Lambda && n == 0 {
            return Err(domain("Lambda family needs n >= 1"));
        }
        Ok(IndexFamily { kind, n, k })
    }

    pub fn theta(n: usize, k: usize) -> Self {
        IndexFamily {
            kind: FamilyKind::Theta,
            n,
            k,
        }
    }

    pub fn omega(n: usize, k: usize) -> Self {
        IndexFamily {
            kind: FamilyKind::Omega,
            n,
            k,
        }
    }

    pub fn lambda(n: usize, k: usize) -> Result<Self> {
        IndexFamily::new(FamilyKind::Lambda, n, k)
    }

    /// Number of coordinates in each tuple.
    pub fn width(&self) -> usize {
        match self.kind {
            FamilyKind::Theta | FamilyKind::Omega => self.n + 1,
            FamilyKind::Lambda => self.n,
        }
    }

    /// Per-coordinate lower bounds.
    pub fn minimums(&self) -> Vec<usize> {
        minimums(self.kind, self.n)
    }

    /// Smallest total for which the family is nonempty.
    pub fn min_total(&self) -> usize {
        series_start(self.kind, self.n)
    }
}

pub(crate) fn minimums(kind: FamilyKind, n: usize) -> Vec<usize> {
    match kind {
        FamilyKind::Theta => (0..=n).map(|j| usize::from(j >= 1)).collect(),
        FamilyKind::Omega => (0..=n).map(|j| usize::from(j < n)).collect(),
        FamilyKind::Lambda => (0..n).map(|j| usize::from(j >= 1)).collect(),
    }
}

pub(crate) fn series_start(kind: FamilyKind, n: usize) -> usize {
    match kind {
        FamilyKind::Theta | FamilyKind::Omega => n,
        FamilyKind::Lambda => n.saturating_sub(1),
    }
}

/// A member of one of the families.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Composition {
    pub parts: Vec<usize>,
    pub total: usize,
}

impl Composition {
    /// Checks the sum and the positivity pattern of `kind`.
    pub fn satisfies(&self, kind: FamilyKind, n: usize) -> bool {
        let mins = minimums(kind, n);
        self.parts.len() == mins.len()
            && self.parts.iter().sum::<usize>() == self.total
            && self.parts.iter().zip(&mins).all(|(p, m)| p >= m)
    }
}

/// Lexicographic enumeration of tuples `parts` with `parts[i] >= mins[i]`
/// and `sum(parts) == total`.
#[derive(Debug, Clone)]
pub struct BoundedCompositions {
    mins: Vec<usize>,
    parts: Vec<usize>,
    total: usize,
    state: IterState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IterState {
    Fresh,
    Running,
    Done,
}

impl BoundedCompositions {
    pub fn new(mins: Vec<usize>, total: usize) -> Self {
        let floor: usize = mins.iter().sum();
        let state = if mins.is_empty() || floor > total {
            IterState::Done
        } else {
            IterState::Fresh
        };
        BoundedCompositions {
            parts: mins.clone(),
            mins,
            total,
            state,
        }
    }

    /// Advances and returns the next tuple without allocating.
    pub fn next_slice(&mut self) -> Option<&[usize]> {
        match self.state {
            IterState::Done => return None,
            IterState::Fresh => {
                let m = self.parts.len();
                let floor: usize = self.mins[..m - 1].iter().sum();
                self.parts[m - 1] = self.total - floor;
                self.state = IterState::Running;
            }
            IterState::Running => {
                if !self.advance() {
                    self.state = IterState::Done;
                    return None;
                }
            }
        }
        Some(&self.parts)
    }

    fn advance(&mut self) -> bool {
        let m = self.parts.len();
        let mut surplus = self.parts[m - 1] - self.mins[m - 1];
        let mut i = m - 1;
        while i > 0 {
            i -= 1;
            if surplus >= 1 {
                self.parts[i] += 1;
                // Reset the suffix to its minimums and put the rest last.
                let mut used: usize = self.parts[..=i].iter().sum();
                for j in i + 1..m - 1 {
                    self.parts[j] = self.mins[j];
                    used += self.mins[j];
                }
                self.parts[m - 1] = self.total - used;
                return true;
            }
            surplus += self.parts[i] - self.mins[i];
        }
        false
    }
}

impl Iterator for BoundedCompositions {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        self.next_slice().map(<[usize]>::to_vec)
    }
}

/// Streams the members of `family` in lexicographic order.
pub fn enumerate(family: &IndexFamily) -> impl Iterator<Item = Composition> {
    let total = family.k;
    BoundedCompositions::new(family.minimums(), total).map(move |parts| Composition { parts, total })
}

/// `|Θ^k_n| = |Ω^k_n| = C(k, n)`, `|Λ^k_n| = C(k, n - 1)`.
pub fn count(family: &IndexFamily) -> Result<u128> {
    match family.kind {
        FamilyKind::Theta | FamilyKind::Omega => binomial(family.k as u128, family.n as u128),
        FamilyKind::Lambda => binomial(family.k as u128, family.n as u128 - 1),
    }
}

/// Exact binomial coefficient, erroring on `u128` overflow.
pub fn binomial(n: u128, r: u128) -> Result<u128> {
    if r > n {
        return Ok(0);
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        // acc * (n - i) is divisible by (i + 1) after the multiplication;
        // split through the gcd to delay overflow.
        let num = n - i;
        let den = i + 1;
        let g = gcd(acc, den);
        let (a, d) = (acc / g, den / g);
        let num = num / d;
        acc = a.checked_mul(num).ok_or(Error::CountOverflow)?;
    }
    Ok(acc)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Number of ways to distribute `m` units over `slots` coordinates of which
/// `forced` must be positive.
pub(crate) fn slot_count(m: usize, slots: usize, forced: usize) -> Option<u128> {
    if slots == 0 {
        return Some(u128::from(m == 0));
    }
    if m < forced {
        return Some(0);
    }
    binomial((m - forced + slots - 1) as u128, (slots - 1) as u128).ok()
}
