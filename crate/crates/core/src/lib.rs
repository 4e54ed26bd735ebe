//! Behavioral simulator for an analog vector-by-matrix multiplier built from
//! NOR-flash floating-gate cells.
//!
//! * [`cell`]: single-cell readout, pulse response and noise
//! * [`array`]: line topology, bias schemes, disturb accounting, state files
//! * [`tuning`]: closed-loop write-verify tuning
//! * [`vmm`]: gate-coupled multiplication and the differential drift-compensated scheme
//! * [`experiments`]: dataset generators for the characterization experiments

pub mod array;
pub mod calibrate;
pub mod campaign;
pub mod cell;
pub mod config;
pub mod error;
pub mod experiments;
pub mod physics;
pub mod search;
pub mod tuning;
pub mod vmm;

pub use array::{ArrayState, BiasScheme, CellRole, DisturbLog, Topology};
pub use cell::{BiasCondition, CellModel, CellState, PulseKind, PulseSpec};
pub use config::{ModelConfig, NoiseParams};
pub use error::{Error, Result};
