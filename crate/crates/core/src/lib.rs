//! Dissipative geometric and holonomic gates: model Hamiltonians, open-system
//! propagation engines, gate and phase extraction, and refocusing protocols.

pub mod acceptance;
pub mod dynamics;
pub mod error;
pub mod holonomy;
pub mod models;
pub mod qcore;
pub mod schemes;

pub use error::{Error, Result};
