//! Trace-driven DRAM + memory-controller simulation with the array supply
//! voltage as a first-class, dynamically adjustable operating parameter.
//!
//! The crate is organized around a small set of models that compose into a
//! multi-core simulation loop:
//!
//! * [`dram`] — device geometry, command set, per-bank state machine and
//!   timing-constraint enforcement.
//! * [`voltage`] — voltage-to-timing tables: which timing parameters a given
//!   array voltage requires for reliable operation, and the inverse.
//! * [`fault`] — stochastic bit-error injection and error-map generation for
//!   operation below the reliable envelope.
//! * [`ecc`] — SECDED outcome classification and spatial-clustering statistics
//!   over error maps.
//! * [`energy`] — DRAM array/peripheral/IO energy with V² scaling plus a
//!   two-parameter CPU model.
//! * [`sim`] — the cycle-level multi-core simulation loop with an FR-FCFS
//!   controller, refresh engine, and epoch-based policy hooks.
//! * [`policy`] — voltage-control policies: performance-aware array-voltage
//!   scaling (optionally region-aware), a frequency/voltage-ladder baseline,
//!   and static baselines.
//! * [`workload`] — trace parsing, synthetic trace generation, and
//!   memory-intensity classification.

pub mod config;
pub mod dram;
pub mod ecc;
pub mod energy;
pub mod fault;
pub mod policy;
pub mod seed;
pub mod sim;
pub mod voltage;
pub mod workload;

pub use config::ExperimentConfig;
pub use dram::{BankState, BankStatus, Command, DramError, Geometry, TimingParams};
pub use ecc::{ClusteringStats, EccCoverage, EccOutcome};
pub use energy::{EnergyBreakdown, PowerProfile};
pub use fault::{BitErrorModel, ErrorMap, WeakRegion};
pub use policy::{EpochObservation, LossModel, PolicyKind};
pub use sim::{SimConfig, SimStats};
pub use voltage::{ErrorOnsetParams, VoltageProfile};
pub use workload::{MemRequest, ReqKind, SynthParams, Trace};
