//! Numerical laboratory for the pluriclosed flow on flat complex tori.

pub mod chern;
pub mod conventions;
pub mod error;
pub mod fields;
pub mod flow;
pub mod functionals;
pub mod grid;
pub mod oracles;
pub mod par;
pub mod riemannian;
pub mod scenarios;
pub mod suite;

pub use error::{PcfError, Result};
pub use num_complex::Complex64 as C64;
