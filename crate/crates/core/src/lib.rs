//! Single-pixel imaging toolkit.
//!
//! A binary measurement matrix is either built from a scrambled Hadamard basis
//! or learned jointly with a U-Net decoder. Images are recovered either by the
//! learned decoder or by an augmented-Lagrangian total-variation solver, and the
//! two routes can be benchmarked against each other on intensity and
//! multispectral data.

pub mod bench;
pub mod dataio;
pub mod error;
mod header;
pub mod imaging;
pub mod metrics;
pub mod neural;
pub mod patterns;
pub mod reconstruct;
pub mod rng;
pub mod trainer;
pub mod tv;

pub use error::{Error, Result};
pub use imaging::{Image, Measurement, NoiseModel, NoiseSpec, PatternKind, PatternMatrix, SpectralCube};
