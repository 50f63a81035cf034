//! Logarithmic energies and capacities of finite unions of intervals, random
//! G-delta sets built from shrinking intervals, and the re-distribution of
//! measures onto them.

pub mod assumptions;
pub mod equilibrium;
pub mod error;
pub mod kernel;
pub mod redistribution;
pub mod report;
pub mod selftest;
pub mod setgen;
pub mod transition;

pub use error::{Error, Result};
