//! Part re-projection distance loss (PRDL) toolkit: 2D point-set geometry,
//! a linear blendshape face model, the PRDL descriptor and its analytic
//! gradient, baseline losses, a fitting loop and a small benchmark harness.

pub mod baselines;
pub mod bench;
pub mod config;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod gradcheck;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod part;
pub mod prdl;
pub mod svg;

pub use error::{Error, Result};
pub use geometry::{Point2, PointSet, SpatialIndex};
pub use part::PartLabel;
