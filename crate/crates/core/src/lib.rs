//! Thermal point cloud enrichment from semantic building models.
//!
//! The crate covers the numerical side of the workflow:
//!
//! * [`geometry`] and [`spatial`]: clouds, rigid transforms, planes and a
//!   k-d tree with deterministic tie-breaking.
//! * [`metrics`]: fitness / RMSE of a registration.
//! * [`sampling`]: B-Rep surfaces sampled on a regular grid into a labeled
//!   model point cloud.
//! * [`projection`]: pinhole projection of points into thermal frames,
//!   colorization and label back-projection.
//! * [`features`], [`coarse`]: normals, FPFH descriptors and fast global
//!   registration under a scaled Geman-McClure penalty.
//! * [`fine`]: RANSAC main planes, height/center rectification and
//!   point-to-plane ICP.
//! * [`enrichment`]: thresholded nearest-neighbor label transfer and
//!   per-class thermal statistics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coarse;
pub mod enrichment;
pub mod error;
pub mod features;
pub mod fine;
pub mod geometry;
pub mod metrics;
pub mod projection;
pub mod sampling;
pub mod spatial;

mod linalg;

pub use error::{Error, Result};
pub use geometry::{Plane, Point3, PointCloud, RigidTransform, SemanticClass, Vector3};
pub use metrics::{evaluate_registration, RegistrationMetrics, RegistrationReport};
pub use spatial::SpatialIndex;
