//! Simulation and analysis toolkit for emitters in photonic-crystal waveguides.
//!
//! The crate covers the full chain from device electromagnetics to photon
//! statistics:
//!
//! - [`geometry`]: rasterized permittivity maps of W1 waveguide devices
//! - [`bands`]: plane-wave-expansion TE band structure, gaps, group index
//! - [`ldos`]: 2D FDTD local-density-of-states spectra with post-filtering
//! - [`emitter`]: multilevel decay model (inhibition + slow-light Purcell)
//! - [`expsim`]: synthetic pulsed-fluorescence experiments and time tags
//! - [`analysis`]: peak/lifetime/g² fitting and group-index extraction
//!
//! All operations are pure functions over value types; anything stochastic
//! takes an explicit seed and is reproducible.

pub mod analysis;
pub mod bands;
pub mod emitter;
pub mod error;
pub mod expsim;
pub mod geometry;
pub mod ldos;
pub mod numeric;

pub use error::{Error, Result};

/// Speed of light in nm/ps. With lengths in nm and times in ps, frequencies
/// come out in THz directly.
pub const C_NM_PER_PS: f64 = 299_792.458;

/// Speed of light in m/s, for SI-unit formulas.
pub const C_M_PER_S: f64 = 299_792_458.0;
