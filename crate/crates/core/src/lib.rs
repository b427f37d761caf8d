//! Steady transonic shocks of the non-isentropic potential flow system in
//! divergent nozzles.
//!
//! The pipeline builds a radial background ([`radial`]), solves the shock
//! free boundary problem for the potential ([`elliptic_fbp`]), transports the
//! entropy-like quantity along streamlines ([`transport`]), and inverts the
//! exit-pressure map ([`inversion`]).

pub mod banded;
pub mod elliptic_fbp;
pub mod error;
pub mod gas;
pub mod inversion;
pub mod jump;
pub mod quad;
pub mod radial;
pub mod transport;

pub use error::{Error, Result};
