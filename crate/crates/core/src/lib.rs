//! Robust optimization-based spatiotemporal fusion (ROSTF).
//!
//! Estimates a noiseless high-resolution image on a target date from one
//! high/low-resolution reference pair and one low-resolution target image.
//! The estimate is the solution of a constrained convex program (hyperspectral
//! total variation with edge-similarity, brightness, data-fidelity and
//! sparse-noise constraints) solved by a preconditioned primal-dual splitting
//! method with operator-norm-based diagonal stepsizes.
//!
//! Module map:
//! - [`raster`]: multiband image container and the `.bmr` file format.
//! - [`linops`]: difference, blur and downsampling operators with adjoints.
//! - [`prox`]: proximity operators and projections.
//! - [`ppds`]: generic preconditioned primal-dual splitting solver.
//! - [`fusion`]: the fusion problem assembled on top of [`ppds`].
//! - [`simulate`]: synthetic fixtures and noise models.
//! - [`metrics`]: RMSE, SAM, MSSIM and CC.
//! - [`experiment`]: fixture → fusion → metrics pipeline for the noise cases.
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature is on
//! (the default); [`Exec::Sequential`] forces the single-threaded path, which
//! produces bit-identical results.

pub mod error;
pub mod exec;
pub mod experiment;
pub mod fusion;
pub mod linops;
pub mod metrics;
pub mod ppds;
pub mod prox;
pub mod raster;
pub mod simulate;

pub use error::{Error, Result};
pub use exec::Exec;
pub use fusion::{FusionInput, FusionOutput, RostfParams};
pub use metrics::MetricsReport;
pub use raster::MultiBandImage;
pub use simulate::CaseConfig;
