//! Scattering of wavepackets from rectangular barriers whose width or
//! height changes while the packet is interacting with them.
//!
//! The crate propagates the one-dimensional Schrödinger equation with a
//! Crank-Nicolson scheme, measures time-resolved transmission past a
//! detector plane, locates transient "superarrival" windows where a
//! perturbed barrier transmits more than its reference, and integrates
//! Bohmian trajectories through the same runs.

pub mod bohmian;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod observables;
pub mod output;
pub mod packet;
pub mod potential;
pub mod propagator;
pub mod superarrival;
pub mod tridiag;
pub mod units;

pub use error::{Error, Result};
pub use grid::{norm, partial_norm, SpatialGrid, WaveState};
pub use packet::{build_packet, initial_energy, PacketKind, PacketSpec};
pub use potential::{BarrierSchedule, Timing};
pub use propagator::{propagate, propagate_on, step, PropagatorConfig, TimeGrid};
pub use units::{make_units, UnitOverrides, UnitSystem};
