//! Truncated BBGKY hierarchy for bosonic reduced density matrices.
//!
//! The hierarchy is propagated in a fixed orthonormal single-particle basis.
//! It is closed at a chosen order by a compatible cluster expansion, and it
//! can be stabilized by minimal-norm corrections that restore the D- and
//! K-conditions of the 2-RDM.

pub mod bbgky;
pub mod cluster;
pub mod correction;
pub mod error;
pub mod fock;
pub mod hamiltonian;
pub mod numerics;
pub mod operator;
pub mod oracle;
pub mod representability;
pub mod selftest;

pub use error::{Error, Result};
