//! Behavioral simulator of a CMOS time-domain spiking-neuron reservoir.
//!
//! Each neuron is a leaky integrate-and-fire cell whose control voltage drives
//! two VCOs with opposite sensitivity. Neurons sit on a 2-D grid and talk only
//! to their four nearest neighbours through 4-bit pulse-width weights; the
//! reservoir state is read out by counting 100 MHz clock edges between VCO
//! rising edges. On top of the simulator sit a ridge-regularized linear
//! readout, the delay/XOR capacity benchmarks and a spoken-digit pipeline.

pub mod config;
pub mod counter;
pub mod digits;
pub mod error;
pub mod export;
pub mod neuron;
pub mod readout;
pub mod reservoir;
pub mod rng;
pub mod tasks;
pub mod weighting;

pub use error::{Error, Result};

/// Crate version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
