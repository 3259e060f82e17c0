//! Simulation of nested-observer thought experiments under collapse and
//! relative-state measurement semantics.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod qcore;
pub mod random;
pub mod registers;
pub mod scenario;
pub mod semantics;

pub use error::{Error, Result};
pub use qcore::{Amplitude, LinearMap, StateVector};
pub use registers::{Register, SpaceLayout};
