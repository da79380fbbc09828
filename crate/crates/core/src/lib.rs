//! Noise-budget engine and simulator for optically mediated single-shot
//! readout of a dispersively coupled transmon through an
//! electro-optomechanical transducer.

pub mod error;
pub mod params;
pub mod noise;
pub mod statespace;
pub mod readout;
pub mod montecarlo;
pub mod config;

pub use error::{Error, Result};
