//! Shape histograms and shape back-projection for unorganized point clouds.
//!
//! The pipeline estimates normals, summarizes each point's neighborhood by
//! the mean and spread of inter-normal angles (INAD), accumulates those
//! pairs from a sample surface into a max-normalized 2D histogram, and scores
//! test points by looking their own INAD pair up in that histogram.

pub mod baseline;
pub mod cloud;
pub mod eigen;
pub mod error;
pub mod eval;
pub mod histogram;
pub mod inad;
pub mod io;
pub mod normals;
pub mod spatial;
pub mod synth;
pub mod tasks;

pub use cloud::{LabelMask, PointCloud, SurfaceClass};
pub use error::{Error, Result};
pub use histogram::{back_project, build_histogram, BinLayout, LikelihoodField, ShapeHistogram};
pub use inad::{compute_inad_field, InadField, InadPair, InadParams, Rejection};
pub use normals::{estimate_all_normals, NormalField, NormalParams};
pub use spatial::KdTree;
