//! Points, clouds, rigid transforms and planes.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

/// Tolerance on `‖RᵀR − I‖∞` and `|det R − 1|` for a valid rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Rotations read from files are projected back onto SO(3) when they are
/// off by less than this; anything worse is rejected.
pub const ROTATION_REPAIR_TOLERANCE: f64 = 1e-4;

/// Facade-level semantic classes carried by model and enriched clouds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticClass {
    Wall,
    Roof,
    Ground,
    Window,
    Door,
    Unlabeled,
}

impl SemanticClass {
    /// Reporting order used by statistics tables.
    pub const ALL: [SemanticClass; 6] = [
        SemanticClass::Wall,
        SemanticClass::Roof,
        SemanticClass::Ground,
        SemanticClass::Window,
        SemanticClass::Door,
        SemanticClass::Unlabeled,
    ];

    /// On-disk code (PLY `label` property).
    pub fn code(self) -> u8 {
        match self {
            SemanticClass::Unlabeled => 0,
            SemanticClass::Wall => 1,
            SemanticClass::Roof => 2,
            SemanticClass::Ground => 3,
            SemanticClass::Window => 4,
            SemanticClass::Door => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SemanticClass::Unlabeled,
            1 => SemanticClass::Wall,
            2 => SemanticClass::Roof,
            3 => SemanticClass::Ground,
            4 => SemanticClass::Window,
            5 => SemanticClass::Door,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::Wall => "wall",
            SemanticClass::Roof => "roof",
            SemanticClass::Ground => "ground",
            SemanticClass::Window => "window",
            SemanticClass::Door => "door",
            SemanticClass::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SemanticClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SemanticClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown semantic class `{s}`")))
    }
}

/// A point cloud with optional per-point intensity, label and object id.
///
/// Each attribute sequence is either empty (attribute absent) or exactly as
/// long as the position list. A present intensity sequence may still have
/// holes: `None` marks points that never received a value. Object ids use
/// the empty string for "no id".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    intensity: Vec<Option<f64>>,
    labels: Vec<SemanticClass>,
    ids: Vec<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            ..Default::default()
        })
    }

    pub fn with_intensity(mut self, intensity: Vec<Option<f64>>) -> Result<Self> {
        self.check_len("intensity", intensity.len())?;
        if let Some(i) = intensity
            .iter()
            .position(|v| v.is_some_and(|v| !(0.0..=1.0).contains(&v)))
        {
            return Err(Error::InvalidCloud(format!("intensity of point {i} is outside [0, 1]")));
        }
        self.intensity = intensity;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<SemanticClass>) -> Result<Self> {
        self.check_len("label", labels.len())?;
        self.labels = labels;
        Ok(self)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        self.check_len("id", ids.len())?;
        self.ids = ids;
        Ok(self)
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != 0 && len != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "{what} attribute has {len} entries for {} points",
                self.points.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn has_intensity(&self) -> bool {
        !self.intensity.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        !self.labels.is_empty()
    }

    pub fn has_ids(&self) -> bool {
        !self.ids.is_empty()
    }

    pub fn intensity(&self) -> &[Option<f64>] {
        &self.intensity
    }

    pub fn labels(&self) -> &[SemanticClass] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Copy of the cloud restricted to `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: if self.has_intensity() {
                indices.iter().map(|&i| self.intensity[i]).collect()
            } else {
                Vec::new()
            },
            labels: if self.has_labels() {
                indices.iter().map(|&i| self.labels[i]).collect()
            } else {
                Vec::new()
            },
            ids: if self.has_ids() {
                indices.iter().map(|&i| self.ids[i].clone()).collect()
            } else {
                Vec::new()
            },
        }
    }

    /// Concatenates two clouds. Attributes present in only one of them are
    /// filled with `None` / `Unlabeled` / `""` for the other.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        fn join<T: Clone>(a: &[T], na: usize, b: &[T], nb: usize, fill: T) -> Vec<T> {
            if a.is_empty() && b.is_empty() {
                return Vec::new();
            }
            let mut out = Vec::with_capacity(na + nb);
            if a.is_empty() {
                out.extend(std::iter::repeat_n(fill.clone(), na));
            } else {
                out.extend_from_slice(a);
            }
            if b.is_empty() {
                out.extend(std::iter::repeat_n(fill, nb));
            } else {
                out.extend_from_slice(b);
            }
            out
        }
        let (na, nb) = (self.len(), other.len());
        PointCloud {
            points: [self.points.as_slice(), other.points.as_slice()].concat(),
            intensity: join(&self.intensity, na, &other.intensity, nb, None),
            labels: join(&self.labels, na, &other.labels, nb, SemanticClass::Unlabeled),
            ids: join(&self.ids, na, &other.ids, nb, String::new()),
        }
    }

    /// Replaces positions, keeping attributes.
    pub fn with_points(&self, points: Vec<Point3>) -> Result<PointCloud> {
        if points.len() != self.points.len() {
            return Err(Error::InvalidCloud(format!(
                "replacement has {} points, cloud has {}",
                points.len(),
                self.points.len()
            )));
        }
        let mut out = self.clone();
        out.points = points;
        Ok(out)
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        let mut out = self.clone();
        for p in &mut out.points {
            *p = t.apply(p);
        }
        out
    }

    pub fn centroid(&self) -> Option<Point3> {
        centroid(&self.points)
    }

    pub(crate) fn set_intensity_values(&mut self, intensity: Vec<Option<f64>>) {
        debug_assert_eq!(intensity.len(), self.points.len());
        self.intensity = intensity;
    }

    pub(crate) fn set_labels_and_ids(&mut self, labels: Vec<SemanticClass>, ids: Vec<String>) {
        debug_assert_eq!(labels.len(), self.points.len());
        debug_assert_eq!(ids.len(), self.points.len());
        self.labels = labels;
        self.ids = ids;
    }
}

/// Applies a rigid transform to every point; attributes are carried over.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    cloud.transformed(t)
}

pub fn centroid(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Some(Point3::from(sum / points.len() as f64))
}

/// Rotation followed by translation: `x ↦ R·x + T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformFile", into = "TransformFile")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3,
}

/// Row-major JSON layout `{rotation: [9], translation: [3]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TransformFile {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<TransformFile> for RigidTransform {
    type Error = Error;

    fn try_from(f: TransformFile) -> Result<Self> {
        let r = Matrix3::from_row_slice(&f.rotation);
        RigidTransform::new_repairing(r, Vector3::from(f.translation))
    }
}

impl From<RigidTransform> for TransformFile {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        TransformFile {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3) -> Result<Self> {
        let t = Self { rotation, translation };
        t.validate()?;
        Ok(t)
    }

    /// Like [`RigidTransform::new`], but a rotation that is off by less
    /// than [`ROTATION_REPAIR_TOLERANCE`] is projected onto SO(3).
    pub fn new_repairing(rotation: Matrix3<f64>, translation: Vector3) -> Result<Self> {
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidTransform("non-finite translation".into()));
        }
        if orthonormality_error(&rotation) <= ROTATION_TOLERANCE {
            return Self::new(rotation, translation);
        }
        if orthonormality_error(&rotation) <= ROTATION_REPAIR_TOLERANCE {
            return Self::new(linalg::nearest_rotation(&rotation), translation);
        }
        Err(Error::InvalidTransform(format!(
            "rotation is not orthonormal (error {:.3e})",
            orthonormality_error(&rotation)
        )))
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized),
    /// followed by `translation`.
    pub fn from_axis_angle(axis: &Vector3, angle: f64, translation: Vector3) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        let rotation = *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix();
        Self { rotation, translation }
    }

    /// Builds a transform from a rotation that is only approximately
    /// orthonormal, projecting it onto SO(3) unconditionally.
    pub(crate) fn from_projected(rotation: &Matrix3<f64>, translation: Vector3) -> Self {
        Self {
            rotation: linalg::nearest_rotation(rotation),
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = orthonormality_error(&self.rotation);
        if !err.is_finite() || err > ROTATION_TOLERANCE {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (error {err:.3e})"
            )));
        }
        if !self.translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidTransform("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3 {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Homogeneous 4×4 matrix.
    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Angle (degrees) and translation distance between two transforms,
    /// measured as the residual `other⁻¹ ∘ self`.
    pub fn difference(&self, other: &RigidTransform) -> (f64, f64) {
        let rot = other.inverse().compose(self).rotation_angle().to_degrees();
        let trans = (self.translation - other.translation).norm();
        (rot, trans)
    }
}

/// `max(‖RᵀR − I‖∞, |det R − 1|)`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let orth = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    orth.max((r.determinant() - 1.0).abs())
}

/// Plane `normal · x = offset` with the inliers it was fitted to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3,
    pub offset: f64,
    pub centroid: Point3,
    pub inliers: Vec<usize>,
}

impl Plane {
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        self.signed_distance(p).abs()
    }

    /// Total least-squares plane through `points`. `None` when fewer than
    /// three points or the points are (nearly) collinear.
    pub fn fit(points: &[Point3]) -> Option<(Vector3, f64, Point3)> {
        if points.len() < 3 {
            return None;
        }
        let c = centroid(points)?;
        let cov = linalg::covariance(points.iter(), &c);
        let (normal, eigenvalues) = linalg::smallest_eigenvector(&cov);
        // two vanishing eigenvalues mean the points are collinear
        let scale = eigenvalues[2].max(f64::MIN_POSITIVE);
        if eigenvalues[1] <= 1e-12 * scale {
            return None;
        }
        Some((normal, normal.dot(&c.coords), c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_keeps_points_bitwise() {
        let cloud = PointCloud::new(vec![Point3::new(1.25, -3.5, 1e6), Point3::new(0.1, 0.2, 0.3)]).unwrap();
        let out = apply_transform(&cloud, &RigidTransform::identity());
        assert_eq!(out.points(), cloud.points());
    }

    #[test]
    fn pure_translation() {
        let cloud = PointCloud::new(vec![Point3::origin()]).unwrap();
        let t = RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(apply_transform(&cloud, &t).point(0), Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_axis_angle(&Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let p = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn attributes_survive_transform() {
        let cloud = PointCloud::new(vec![Point3::origin(), Point3::new(1.0, 1.0, 1.0)])
            .unwrap()
            .with_intensity(vec![Some(0.5), None])
            .unwrap()
            .with_labels(vec![SemanticClass::Wall, SemanticClass::Door])
            .unwrap()
            .with_ids(vec!["a".into(), "b".into()])
            .unwrap();
        let t = RigidTransform::from_axis_angle(&Vector3::x(), 0.3, Vector3::new(1.0, 2.0, 3.0));
        let out = apply_transform(&cloud, &t);
        assert_eq!(out.intensity(), cloud.intensity());
        assert_eq!(out.labels(), cloud.labels());
        assert_eq!(out.ids(), cloud.ids());
        // input untouched
        assert_eq!(cloud.point(1), Point3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let r = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            RigidTransform::new(r, Vector3::zeros()),
            Err(Error::InvalidTransform(_))
        ));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = RigidTransform::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 1.1, Vector3::new(4.0, -5.0, 6.0));
        let id = t.compose(&t.inverse());
        assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(id.translation().norm() < 1e-9);
        let b = RigidTransform::identity().compose(&t);
        assert_eq!(b, t);
    }

    #[test]
    fn mismatched_attribute_length_is_rejected() {
        let cloud = PointCloud::new(vec![Point3::origin(); 3]).unwrap();
        assert!(cloud.clone().with_labels(vec![SemanticClass::Wall]).is_err());
        assert!(cloud.clone().with_intensity(vec![Some(1.5), None, None]).is_err());
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn transform_json_layout_is_row_major() {
        let t = RigidTransform::from_axis_angle(&Vector3::z(), FRAC_PI_2, Vector3::new(1.0, 2.0, 3.0));
        let v = serde_json_value(&t);
        let back: RigidTransform = serde_from_value(v);
        assert_eq!(back, t);
    }

    // minimal serde round trip without pulling serde_json into the library
    fn serde_json_value(t: &RigidTransform) -> TransformFile {
        TransformFile::from(*t)
    }

    fn serde_from_value(f: TransformFile) -> RigidTransform {
        assert!((f.rotation[1] + 1.0).abs() < 1e-12, "row-major r01 should be -1");
        RigidTransform::try_from(f).unwrap()
    }

    #[test]
    fn plane_fit_rejects_collinear() {
        let pts: Vec<_> = (0..10).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(Plane::fit(&pts).is_none());
    }
}
