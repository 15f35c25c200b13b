//! State probabilities of state-dependent fractional point processes.
//!
//! The crate evaluates the closed-form multi-index series for the
//! state-dependent time fractional Poisson processes (versions I and II),
//! the state-dependent fractional pure birth process and their equal-order
//! and linear-rate special cases, and provides independent routes to the
//! same numbers:
//!
//! * [`adm`]: exact Adomian stage polynomials built from Riemann-Liouville
//!   integrals of sparse fractional polynomials,
//! * [`transforms`]: closed-form Laplace transforms, forward quadrature and
//!   fixed-Talbot inversion,
//! * [`simulate`]: Monte-Carlo with Mittag-Leffler waiting times.
//!
//! The crate is `no_std` and only needs `alloc`. IO, the command line and
//! output formats live in the `fracpoint-cli` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adm;
pub mod compositions;
mod error;
pub mod processes;
pub mod quad;
pub mod real;
pub mod simulate;
pub mod specfun;
pub mod sum;
pub mod transforms;

pub use error::{Error, Result};
pub use processes::{EvalResult, OrderSequence, ProcessKind, SumMode, TruncationPolicy};
pub use specfun::MlOrder;
