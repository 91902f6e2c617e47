//! G-convexity tools for screening problems with non-quasilinear agent
//! preferences.
//!
//! An agent of type `x` buying product `y` at price `z` receives utility
//! `G(x, y, z)`; the principal receives `pi(x, y, z)`. The crate certifies
//! concavity of the principal's objective over indirect utilities, solves the
//! discretized pricing program and provides a brute-force oracle.

pub mod certify;
pub mod expr;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod solver;
