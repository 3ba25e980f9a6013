//! Pinhole projection of world points into thermal frames.
//!
//! A frame pose maps world coordinates to camera coordinates,
//! `x_c = R·x + T`, and the intrinsics give
//! `u = s·f·x_c.x / x_c.z + c_x`, `v = f·x_c.y / x_c.z + c_y`.
//! Pixel centers sit at integer coordinates; a projection is in view when
//! `(u, v) ∈ [0, W−1] × [0, H−1]` and the depth is positive.

use nalgebra::{Matrix3, Matrix3x4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{estimate_normals, NormalCloud, NormalParams};
use crate::geometry::{Point3, PointCloud, RigidTransform, SemanticClass, Vector3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub f: f64,
    /// Aspect ratio applied to the horizontal focal term.
    pub s: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal length must be positive, got {}",
                self.f
            )));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "aspect ratio must be positive, got {}",
                self.s
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidParameter("principal point must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        Ok(())
    }

    /// `K` with the aspect ratio folded into the first row.
    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.s * self.f, 0.0, self.cx, 0.0, self.f, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K·[R|T]`.
    pub fn projection_matrix(&self, world_to_camera: &RigidTransform) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(world_to_camera.rotation());
        rt.set_column(3, world_to_camera.translation());
        self.intrinsic_matrix() * rt
    }

    fn in_view(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    /// Pixel whose center is closest to `(u, v)`.
    pub fn pixel(&self, u: f64, v: f64) -> (usize, usize) {
        (u.round() as usize, v.round() as usize)
    }
}

/// Row-major grayscale image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "image data has {} values, expected {}×{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear interpolation between the four surrounding pixel centers.
    pub fn bilinear(&self, u: f64, v: f64) -> f64 {
        let x0 = (u.floor().max(0.0) as usize).min(self.width - 1);
        let y0 = (v.floor().max(0.0) as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (u - x0 as f64).clamp(0.0, 1.0);
        let fy = (v - y0 as f64).clamp(0.0, 1.0);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
    }
}

/// One thermal frame: world→camera transform and its image.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePose {
    pub transform: RigidTransform,
    pub image: Image,
}

/// Per-pixel labels; `None` is the background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Option<SemanticClass>>,
}

impl LabelImage {
    pub fn get(&self, x: usize, y: usize) -> Option<SemanticClass> {
        self.pixels[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }
}

/// `(u, v, depth)` of a world point, or `None` when behind the camera or
/// out of view.
pub fn project_with_depth(cam: &CameraModel, world_to_camera: &RigidTransform, x: &Point3) -> Option<(f64, f64, f64)> {
    let xc = world_to_camera.apply(x);
    if !(xc.z > 0.0) {
        return None;
    }
    let u = cam.s * cam.f * xc.x / xc.z + cam.cx;
    let v = cam.f * xc.y / xc.z + cam.cy;
    cam.in_view(u, v).then_some((u, v, xc.z))
}

pub fn project_point(cam: &CameraModel, world_to_camera: &RigidTransform, x: &Point3) -> Option<(f64, f64)> {
    project_with_depth(cam, world_to_camera, x).map(|(u, v, _)| (u, v))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Bilinear,
    /// Value of the pixel containing the projection.
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionParams {
    /// Per-pixel z-buffer test.
    pub enabled: bool,
    /// Points deeper than the pixel minimum plus this are occluded.
    pub depth_tolerance: f64,
    pub sampling: Sampling,
    /// Radius for the normals used to rank frames; only needed with more
    /// than one frame.
    pub normal_radius: f64,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        Self {
            enabled: true,
            depth_tolerance: 0.1,
            sampling: Sampling::Bilinear,
            normal_radius: 0.3,
        }
    }
}

/// Minimum depth per pixel over all in-view projections.
fn depth_buffer(cam: &CameraModel, projections: &[Option<(f64, f64, f64)>]) -> Vec<f64> {
    let mut zbuf = vec![f64::INFINITY; cam.width * cam.height];
    for &(u, v, d) in projections.iter().flatten() {
        let (x, y) = cam.pixel(u, v);
        let cell = &mut zbuf[y * cam.width + x];
        if d < *cell {
            *cell = d;
        }
    }
    zbuf
}

#[derive(Clone, Copy)]
struct Candidate {
    value: f64,
    depth: f64,
    /// |cos| between viewing ray and normal, when the normal is known.
    alignment: Option<f64>,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    match (a.alignment, b.alignment) {
        (Some(x), Some(y)) if x != y => x > y,
        _ => a.depth < b.depth,
    }
}

/// Samples each point's intensity from the frames that see it.
///
/// A point seen by several frames takes the value from the frame whose
/// viewing ray is best aligned with the point normal, falling back to the
/// smallest depth. Points seen by no frame end up without intensity.
pub fn colorize_cloud(
    cloud: &PointCloud,
    cam: &CameraModel,
    frames: &[FramePose],
    params: &OcclusionParams,
) -> Result<PointCloud> {
    cam.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidParameter("colorization needs at least one frame".into()));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput("cloud to colorize"));
    }
    if params.enabled && !(params.depth_tolerance >= 0.0) {
        return Err(Error::InvalidParameter("depth tolerance must be ≥ 0".into()));
    }
    for (k, frame) in frames.iter().enumerate() {
        frame.transform.validate()?;
        if frame.image.width() != cam.width || frame.image.height() != cam.height {
            return Err(Error::InvalidParameter(format!(
                "frame {k} image is {}×{}, camera expects {}×{}",
                frame.image.width(),
                frame.image.height(),
                cam.width,
                cam.height
            )));
        }
    }
    let normals: Option<NormalCloud> = if frames.len() > 1 {
        Some(estimate_normals(
            cloud,
            &NormalParams::with_radius(params.normal_radius),
        )?)
    } else {
        None
    };

    let pts = cloud.points();
    let mut best: Vec<Option<Candidate>> = vec![None; pts.len()];
    for frame in frames {
        let proj: Vec<_> = pts
            .par_iter()
            .map(|p| project_with_depth(cam, &frame.transform, p))
            .collect();
        let zbuf = params.enabled.then(|| depth_buffer(cam, &proj));
        let inv = frame.transform.inverse();
        let center = Point3::from(*inv.translation());
        best.par_iter_mut().enumerate().for_each(|(i, slot)| {
            let Some((u, v, depth)) = proj[i] else { return };
            let (x, y) = cam.pixel(u, v);
            if let Some(z) = &zbuf {
                if depth > z[y * cam.width + x] + params.depth_tolerance {
                    return;
                }
            }
            let value = match params.sampling {
                Sampling::Bilinear => frame.image.bilinear(u, v),
                Sampling::Nearest => frame.image.get(x, y),
            };
            let alignment = normals.as_ref().filter(|n| n.valid[i]).map(|n| {
                let ray: Vector3 = pts[i] - center;
                (ray.dot(&n.normals[i]) / ray.norm()).abs()
            });
            let cand = Candidate {
                value,
                depth,
                alignment,
            };
            if slot.as_ref().is_none_or(|b| better(&cand, b)) {
                *slot = Some(cand);
            }
        });
    }
    let mut out = cloud.clone();
    out.set_intensity_values(best.into_iter().map(|c| c.map(|c| c.value)).collect());
    Ok(out)
}

/// Renders cloud labels into the frame with a z-buffer; among points
/// falling into one pixel the nearest wins, ties to the lower index.
pub fn back_project_labels(
    cloud: &PointCloud,
    cam: &CameraModel,
    world_to_camera: &RigidTransform,
) -> Result<LabelImage> {
    cam.validate()?;
    world_to_camera.validate()?;
    if !cloud.has_labels() {
        return Err(Error::InvalidParameter("back-projection needs a labeled cloud".into()));
    }
    let proj: Vec<_> = cloud
        .points()
        .par_iter()
        .map(|p| project_with_depth(cam, world_to_camera, p))
        .collect();
    let mut depth = vec![f64::INFINITY; cam.width * cam.height];
    let mut pixels = vec![None; cam.width * cam.height];
    for (i, pr) in proj.iter().enumerate() {
        let Some((u, v, d)) = *pr else { continue };
        let (x, y) = cam.pixel(u, v);
        let k = y * cam.width + x;
        if d < depth[k] {
            depth[k] = d;
            pixels[k] = Some(cloud.labels()[i]);
        }
    }
    Ok(LabelImage {
        width: cam.width,
        height: cam.height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraModel {
        CameraModel {
            f: 500.0,
            s: 1.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }

    #[test]
    fn principal_point_and_behind_camera() {
        let cam = camera();
        let id = RigidTransform::identity();
        assert_eq!(
            project_point(&cam, &id, &Point3::new(0.0, 0.0, 1.0)),
            Some((319.5, 239.5))
        );
        assert_eq!(project_point(&cam, &id, &Point3::new(0.0, 0.0, -1.0)), None);
        assert_eq!(project_point(&cam, &id, &Point3::new(0.0, 0.0, 0.0)), None);
        // just outside the right border
        assert_eq!(project_point(&cam, &id, &Point3::new(1.0, 0.0, 1.0)), None);
    }

    #[test]
    fn matches_homogeneous_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cam = camera();
        cam.s = 1.1;
        for _ in 0..100 {
            let axis = Vector3::new(rng.random(), rng.random(), rng.random::<f64>() + 0.1);
            let pose = RigidTransform::from_axis_angle(
                &axis,
                rng.random_range(-0.3..0.3),
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 8.0),
            );
            let p = Point3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..1.0),
            );
            let h = cam.projection_matrix(&pose) * p.to_homogeneous();
            let (u, v) = (h.x / h.z, h.y / h.z);
            match project_point(&cam, &pose, &p) {
                Some((pu, pv)) => assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9),
                None => assert!(h.z <= 0.0 || !cam.in_view(u, v)),
            }
        }
    }

    #[test]
    fn constant_image_single_point() {
        let cam = camera();
        let cloud = PointCloud::new(vec![Point3::new(0.1, 0.2, 3.0)]).unwrap();
        let frame = FramePose {
            transform: RigidTransform::identity(),
            image: Image::constant(640, 480, 0.5).unwrap(),
        };
        let out = colorize_cloud(&cloud, &cam, &[frame], &OcclusionParams::default()).unwrap();
        assert_eq!(out.intensity(), &[Some(0.5)]);
        assert_eq!(out.points(), cloud.points());
    }

    #[test]
    fn occlusion_keeps_only_nearest_point() {
        let cam = camera();
        let cloud = PointCloud::new(vec![Point3::new(0.2, 0.1, 4.0), Point3::new(0.1, 0.05, 2.0)]).unwrap();
        let frame = FramePose {
            transform: RigidTransform::identity(),
            image: Image::constant(640, 480, 0.7).unwrap(),
        };
        let out = colorize_cloud(&cloud, &cam, std::slice::from_ref(&frame), &OcclusionParams::default()).unwrap();
        assert_eq!(out.intensity(), &[None, Some(0.7)]);
        let off = OcclusionParams {
            enabled: false,
            ..Default::default()
        };
        let out = colorize_cloud(&cloud, &cam, &[frame], &off).unwrap();
        assert_eq!(out.intensity(), &[Some(0.7), Some(0.7)]);
    }

    #[test]
    fn gradient_image_is_sampled_analytically() {
        let cam = camera();
        let image = Image::from_fn(640, 480, |x, y| 0.25 * x as f64 / 639.0 + 0.75 * y as f64 / 479.0).unwrap();
        let frame = FramePose {
            transform: RigidTransform::from_translation(Vector3::new(0.0, 0.0, 5.0)),
            image,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-2.3..2.3), 0.0))
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let out = colorize_cloud(&cloud, &cam, std::slice::from_ref(&frame), &OcclusionParams::default()).unwrap();
        for (p, i) in pts.iter().zip(out.intensity()) {
            let (u, v) = project_point(&cam, &frame.transform, p).unwrap();
            let want = 0.25 * u / 639.0 + 0.75 * v / 479.0;
            assert!((i.unwrap() - want).abs() < 1.0 / 255.0);
        }
    }

    #[test]
    fn no_frames_is_an_error() {
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 1.0)]).unwrap();
        assert!(matches!(
            colorize_cloud(&cloud, &camera(), &[], &OcclusionParams::default()),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn better_view_wins_across_frames() {
        let cam = camera();
        // a small planar patch facing +z
        let pts: Vec<Point3> = (0..11)
            .flat_map(|i| (0..11).map(move |j| Point3::new(i as f64 * 0.05 - 0.25, j as f64 * 0.05 - 0.25, 0.0)))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let frontal = FramePose {
            transform: RigidTransform::from_translation(Vector3::new(0.0, 0.0, 6.0)),
            image: Image::constant(640, 480, 0.2).unwrap(),
        };
        // oblique and closer
        let oblique_pose = RigidTransform::from_axis_angle(&Vector3::y(), 0.8, Vector3::new(0.0, 0.0, 3.0));
        let oblique = FramePose {
            transform: oblique_pose,
            image: Image::constant(640, 480, 0.9).unwrap(),
        };
        let out = colorize_cloud(&cloud, &cam, &[oblique, frontal], &OcclusionParams::default()).unwrap();
        assert!(out.intensity().iter().all(|v| *v == Some(0.2)));
    }

    #[test]
    fn back_projection_single_point_and_depth_order() {
        let cam = camera();
        let id = RigidTransform::identity();
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 2.0)])
            .unwrap()
            .with_labels(vec![SemanticClass::Window])
            .unwrap();
        let img = back_project_labels(&cloud, &cam, &id).unwrap();
        assert_eq!(img.foreground_count(), 1);

        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 4.0), Point3::new(0.0, 0.0, 2.0)])
            .unwrap()
            .with_labels(vec![SemanticClass::Wall, SemanticClass::Door])
            .unwrap();
        let img = back_project_labels(&cloud, &cam, &id).unwrap();
        let (x, y) = cam.pixel(319.5, 239.5);
        assert_eq!(img.get(x, y), Some(SemanticClass::Door));
        assert_eq!(img.foreground_count(), 1);

        let bare = PointCloud::new(vec![Point3::new(0.0, 0.0, 2.0)]).unwrap();
        assert!(matches!(
            back_project_labels(&bare, &cam, &id),
            Err(Error::InvalidParameter(_))
        ));
    }
}
