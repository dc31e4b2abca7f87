//! Perspective-aware fusion of depth maps and surface normals.
//!
//! Fuses a perspective depth map (with per-pixel confidence, possibly
//! containing gaps) and a pixel-aligned normal map into one refined
//! metric depth map via a log-depth substitution, which turns the
//! perspective normal constraint into a linear gradient relation and
//! lets any orthographic gradient-based solver handle perspective data.
//!
//! - [`grids`] / [`pfm`]: field types, masks, PFM I/O
//! - [`camera`]: pinhole model, back-projection, normals from depth
//! - [`gradfield`]: normal→gradient conversions, difference operators
//! - [`solver_ls`] / [`solver_tgv`]: the two fusion engines
//! - [`pipeline`]: the Ortho / Naive / PG / PTGV methods
//! - [`synth`]: analytic scenes and the degradation protocol
//! - [`metrics`]: RMSE / MAE evaluation and the benchmark report

pub mod camera;
pub mod error;
pub mod gradfield;
pub mod grids;
pub mod metrics;
pub mod pfm;
pub mod pipeline;
pub mod solver_ls;
pub mod solver_tgv;
pub mod synth;

pub use camera::CameraIntrinsics;
pub use error::{FusionError, Result};
pub use grids::{ConfidenceField, DomainMask, ScalarField, VectorField2, VectorField3};
pub use pipeline::{FusionMethod, FusionOutput};
pub use solver_ls::LsParams;
pub use solver_tgv::TgvParams;
