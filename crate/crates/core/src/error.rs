use alloc::boxed::Box;
use core::fmt;

/// Everything that can go wrong while solving, lifting barriers or simulating.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// `R + GᵀPG` is too badly conditioned to invert reliably.
    IllConditioned { stage: usize, condition: f64 },
    /// `R + GᵀPG` failed its Cholesky factorization.
    NotPositiveDefinite { stage: usize },
    /// `b(x)` vanished while `a(x) <= 0`, so no control satisfies the constraint.
    Infeasible { stage: usize, a: f64 },
    /// A finite-difference probe produced a non-finite value.
    NonFiniteJacobian { stage: usize, coordinate: usize },
    /// A barrier chain level evaluated to a non-finite value or gradient.
    NonFiniteChain { level: usize },
    /// A cost matrix violated its definiteness requirement.
    InvalidCost(&'static str),
    /// Two inputs that must agree in length did not.
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A configuration value is out of range.
    InvalidConfig(&'static str),
    /// Policy evaluation failed while rolling out the nominal trajectory.
    ForwardPass { stage: usize, cause: Box<Error> },
    /// The initial state lies outside the safe set.
    UnsafeInitialState { level: usize, value: f64 },
    /// The simulated state left the finite range.
    StateDiverged { time: f64 },
    /// A controller was asked for a control before its first update.
    NoPolicy,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::IllConditioned { stage, condition } => write!(
                f,
                "stage {stage}: R + GᵀPG is ill-conditioned (condition estimate {condition:e})"
            ),
            Error::NotPositiveDefinite { stage } => {
                write!(f, "stage {stage}: R + GᵀPG is not positive definite")
            }
            Error::Infeasible { stage, a } => write!(
                f,
                "stage {stage}: b(x) vanishes while a(x) = {a} <= 0, constraint infeasible"
            ),
            Error::NonFiniteJacobian { stage, coordinate } => write!(
                f,
                "stage {stage}: non-finite value while differencing state coordinate {coordinate}"
            ),
            Error::NonFiniteChain { level } => {
                write!(f, "barrier chain level {level} is not finite")
            }
            Error::InvalidCost(reason) => write!(f, "invalid cost: {reason}"),
            Error::LengthMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            Error::InvalidConfig(reason) => write!(f, "invalid configuration: {reason}"),
            Error::ForwardPass { stage, cause } => {
                write!(f, "forward pass failed at stage {stage}: {cause}")
            }
            Error::UnsafeInitialState { level, value } => write!(
                f,
                "initial state is outside the safe set (chain level {level} = {value})"
            ),
            Error::StateDiverged { time } => write!(f, "state diverged at t = {time} s"),
            Error::NoPolicy => write!(f, "controller has not been updated yet"),
        }
    }
}

impl core::error::Error for Error {}
