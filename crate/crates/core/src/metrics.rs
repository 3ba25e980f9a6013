//! Registration quality: fitness and inlier RMSE.
//!
//! For every transformed source point, its nearest target point is an
//! inlier correspondence when it lies within the threshold (inclusive).
//! Fitness is the inlier count over the *target* size, clamped to 1, and
//! RMSE is taken over the inlier distances. With no inliers the RMSE is
//! undefined (`None`), never zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::spatial::SpatialIndex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationMetrics {
    pub fitness: f64,
    pub rmse: Option<f64>,
    pub inlier_count: usize,
}

/// Result of a registration stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub transform: RigidTransform,
    pub fitness: f64,
    pub rmse: Option<f64>,
    pub inlier_count: usize,
    pub iterations: usize,
    pub converged: bool,
    /// One entry per iteration.
    pub rmse_trace: Vec<f64>,
}

pub fn evaluate_registration(
    source: &PointCloud,
    target: &PointCloud,
    t: &RigidTransform,
    threshold: f64,
) -> Result<RegistrationMetrics> {
    check_threshold(threshold)?;
    if source.is_empty() {
        return Err(Error::EmptyInput("source cloud"));
    }
    let index = SpatialIndex::new(target.points())?;
    evaluate_with_index(source, &index, t, threshold)
}

/// [`evaluate_registration`] against a prebuilt target index.
pub fn evaluate_with_index(
    source: &PointCloud,
    target: &SpatialIndex,
    t: &RigidTransform,
    threshold: f64,
) -> Result<RegistrationMetrics> {
    check_threshold(threshold)?;
    if source.is_empty() {
        return Err(Error::EmptyInput("source cloud"));
    }
    if target.is_empty() {
        return Err(Error::EmptyInput("target cloud"));
    }
    let moved: Vec<_> = source.points().iter().map(|p| t.apply(p)).collect();
    let nn = target.nearest_many(&moved);
    let mut inliers = 0usize;
    let mut sum_sq = 0.0;
    for &(_, d) in &nn {
        if d <= threshold {
            inliers += 1;
            sum_sq += d * d;
        }
    }
    Ok(RegistrationMetrics {
        fitness: (inliers as f64 / target.len() as f64).min(1.0),
        rmse: (inliers > 0).then(|| (sum_sq / inliers as f64).sqrt()),
        inlier_count: inliers,
    })
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "evaluation threshold must be positive, got {threshold}"
        )));
    }
    Ok(())
}
