use alloc::string::String;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A series did not meet its stopping rule.
    #[error("no convergence after {terms} terms: {reason}")]
    NonConvergence { terms: usize, reason: &'static str },

    /// A Riemann-Liouville derivative would produce `t^rho` with `rho < 0`.
    #[error("fractional derivative produces negative exponent {exponent}")]
    NegativeExponent { exponent: f64 },

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    QuadratureFailure { estimate: f64, tolerance: f64 },

    /// A simulated path needs a waiting time beyond the supplied orders.
    #[error("path reached state {state} but only {supplied} orders were supplied")]
    OrdersExhausted { state: usize, supplied: usize },

    /// A cardinality does not fit in 128 bits.
    #[error("composition count overflows u128")]
    CountOverflow,

    /// A Talbot contour node lies too close to a pole of the transform.
    #[error("Talbot node within {distance:e} of a pole")]
    PoleProximity { distance: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
