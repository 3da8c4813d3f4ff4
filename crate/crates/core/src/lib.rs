//! Controlled perturbation: configurable-precision floating point, guarded
//! predicate evaluation, grid perturbation and the precision analysis that
//! ties success probability to arithmetic precision.

pub mod algo;
pub mod cli;
pub mod bounds;
pub mod errorbounds;
pub mod exact;
pub mod geom;
pub mod grid;
pub mod qr;
pub mod softfloat;

pub use exact::Rational;
pub use softfloat::{Format, SoftFloat};
