//! Discrete-event simulator of ABR congestion control for cell networks.

pub mod credit;
pub mod engine;
pub mod fairness;
pub mod harness;
pub mod model;
pub mod schemes;
pub mod traffic;
