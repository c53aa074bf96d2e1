//! Optimal release strategies for Wolbachia population replacement.
//!
//! The crate covers the two-species wild/infected mosquito model, its
//! high-birth-rate reduction to a scalar ODE on the infected proportion,
//! closed-form bang-bang policies for the reduced problem, a
//! direct-transcription solver with adjoint gradients for both models, and
//! first-order optimality certificates.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`). The `*64`
//! aliases below fix the scalar to `f64`, which is what the CLI uses.

pub mod analytic;
pub mod dynamics;
mod error;
pub mod integrate;
pub mod quadrature;
mod scalar;
pub mod transcribe;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub use analytic::{BangBangPolicy, OptimalValue};
pub use dynamics::{FullParams, FullState, ReducedParams, ReducedState};
pub use integrate::{ControlProfile, TimeGrid, Trajectory};
pub use transcribe::{HorizonMode, PenaltyTerm, ProblemSpec, SolveReport, SystemSpec};
pub use verify::{PmpCertificate, ReductionReport};

pub type ReducedParams64 = ReducedParams<f64>;
pub type FullParams64 = FullParams<f64>;
pub type FullState64 = FullState<f64>;
pub type TimeGrid64 = TimeGrid<f64>;
pub type ControlProfile64 = ControlProfile<f64>;
pub type BangBangPolicy64 = BangBangPolicy<f64>;
pub type ProblemSpec64 = ProblemSpec<f64>;
pub type SolveReport64 = SolveReport<f64>;
pub type PmpCertificate64 = PmpCertificate<f64>;
pub type ReductionReport64 = ReductionReport<f64>;

pub type ReducedParams32 = ReducedParams<f32>;
pub type FullParams32 = FullParams<f32>;
