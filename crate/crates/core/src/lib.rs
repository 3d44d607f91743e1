//! Optimal control of closed-population epidemic models with `n` infected
//! compartments and a transmission-reducing control on each of them.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod model;
pub mod pmp;
pub mod solver;

pub use error::{Error, Result};
pub use model::{preset, CostSpec, EpidemicModel, Horizon, InitialState, Scenario, PRESET_NAMES};
