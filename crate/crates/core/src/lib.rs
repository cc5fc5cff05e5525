//! Spherical-harmonic sound field translation.
//!
//! Estimates higher-order SH coefficients at a global origin from
//! lower-order coefficients measured at several translated points. This
//! crate holds the numerical side: special functions, analytic plane-wave
//! fields, the translation operator with its ridge-regularised inverse,
//! simulated datasets and the evaluation metrics.

pub mod dataset;
pub mod error;
pub mod field;
pub mod metrics;
pub mod special;
pub mod translation;

pub use error::{Error, Result};
pub use field::{PlaneWaveSource, Scene, ShCoeffSet};
pub use metrics::{coss, edm, sdr, GridSpec};
pub use special::{HarmonicIndex, SphericalCoord, Wavenumber};
pub use translation::{RidgeConfig, RidgeMode, TranslationMatrix};
