//! Reference implementations used as independent oracles in tests.
//!
//! Everything here is deliberately scalar (`f64` and `Vec<f64>`), written
//! against textbook formulas with no shared code or linear-algebra stack
//! with the crates under test.

pub mod conjugate;
pub mod gridpost;
pub mod kalman;
pub mod quadrature;
pub mod stats;
