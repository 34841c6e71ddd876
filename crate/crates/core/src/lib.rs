//! Optimal control of 1- and 2-qubit gates and the robustness of those
//! controls to additive and multiplicative stochastic field noise, measured
//! through the Hessian of the gate-fidelity landscape.

pub mod config;
pub mod dmorph;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod grid;
pub mod io;
pub mod landscape;
pub mod linalg;
pub mod noise;
pub mod robustness;
pub mod system;

pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::TimeGrid;
pub use landscape::{HessianKernel, HessianSpectrum, TargetGate};
pub use noise::{NoiseKind, NoiseModel, NoiseSpectrum, Regime};

pub use system::{ControlField, PropagationResult, QuantumSystem};
