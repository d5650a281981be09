//! Numerical study of Ricci flows near the round shrinking sphere.
//!
//! The crate works on SO(n)-invariant (zonal) fields of the round `S^n` with
//! `Ric = g/2`, discretised by zonal spherical harmonics. Modules build on one
//! another:
//!
//! * [`geometry`]: the background, fields, linear operators and curvature.
//! * [`spectral`]: Galerkin matrices of the stability and gauge operators,
//!   eigen-decomposition and the Lie/essential splitting.
//! * [`entropy`]: Perelman's entropy and its second variation.
//! * [`flows`]: rescaled Ricci-DeTurck and harmonic map heat flows, gauges,
//!   decay-rate fitting and the dynamics diagnostics.
//! * [`construction`]: Duhamel and Picard solvers that build ancient and
//!   immortal flows with prescribed asymptotics.

pub mod error;
pub mod geometry;
pub mod entropy;
pub mod construction;
pub mod flows;
pub mod spectral;

pub use error::{Error, Result};
