//! Plant point-cloud processing: metric normalization of multi-view
//! reconstructions, t-SNE based superpoint oversegmentation, a set-abstraction
//! classifier with adaptive region centers and radii, block partitioning for
//! per-point networks, and leaf/stem segmentation metrics.
//!
//! Coordinates are centimetres throughout.

pub mod cloud;
pub mod config;
pub mod error;
pub mod lscnet;
pub mod metrics;
pub mod normalize;
pub mod partition;
pub mod rng;
pub mod superpoint;
pub mod synth;

pub use cloud::{Label, PointCloud};
pub use error::{Error, Result};
