//! Indicator functions for locating the support of a potential in the
//! Schrodinger equation -Lap u + V u = 0 on a box from Dirichlet-to-Neumann data.

pub mod config;
pub mod error;
pub mod grid;
pub mod indicators;
pub mod kernel;
pub mod needle;
pub mod potential;
pub mod rates;
pub(crate) mod reduce;
pub mod report;
pub mod scan;
pub mod sideb;
pub mod solver;

pub use error::{IpsError, Result};
