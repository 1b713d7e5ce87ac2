//! Fluvial-erosion covariates from digital elevation models and Bayesian
//! point-process models of earthquake-induced landslides.
//!
//! The crate is organised along the processing chain:
//!
//! * [`raster`]: grids, ESRI ASCII I/O, resampling.
//! * [`flow`]: depression filling, D8 routing, drainage area.
//! * [`channel`]: channel network, Strahler order, basins, Fd2Ch / Rf2Ch.
//! * [`steepness`]: chi transform, ksn, hillslope disaggregation, infill.
//! * [`mesh`]: hexagonal-lattice triangulation and integration quadrature.
//! * [`model`]: model formulas, latent Gaussian construction, Laplace inference.
//! * [`assess`]: cross-validation splits and proper scoring rules.
//! * [`synthetic`]: seeded generators for test landscapes and point patterns.

pub mod error;
pub mod assess;
pub mod channel;
pub mod flow;
pub mod mesh;
pub mod model;
pub mod raster;
pub mod steepness;
pub mod synthetic;

pub use error::{Error, ErrorClass, Result};
