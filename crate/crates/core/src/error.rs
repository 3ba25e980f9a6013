use thiserror::Error;

use crate::geometry::RigidTransform;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid building model: {0}")]
    InvalidModel(String),

    #[error("degenerate surface `{id}`: {reason}")]
    DegenerateSurface { id: String, reason: String },

    #[error("sampling produced no points")]
    EmptyOutput,

    #[error("no correspondences survived matching")]
    NoCorrespondence,

    #[error("no plane with at least {min_inliers} inliers found")]
    NoPlane { min_inliers: usize },

    #[error("ICP diverged at iteration {iteration}: no correspondences within {max_distance} m")]
    Divergence {
        iteration: usize,
        max_distance: f64,
        last: Box<RigidTransform>,
    },
}
