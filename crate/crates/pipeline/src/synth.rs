//! Synthetic facade scenes with ground truth.
//!
//! The model is a street facade in the `y = 0` plane (outside toward
//! `−y`) with recessed window and door panels, two side walls, a ground
//! strip in front and a sloped roof strip. The scan is the model sampled
//! densely, cropped along `x`, perturbed by Gaussian noise, with clutter in
//! front, and finally expressed in its own frame: `gt` maps scan
//! coordinates to model coordinates. Thermal frames are ray-cast renders
//! of an analytic intensity field, posed in the scan frame.

use std::path::{Path, PathBuf};

use lodtherm::geometry::{Point3, PointCloud, RigidTransform, SemanticClass, Vector3};
use lodtherm::projection::{CameraModel, FramePose, Image};
use lodtherm::sampling::{point_in_polygon, sample_surface, BuildingModel, PlaneFrame, SemanticSurface, Vector2d};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::io;
use crate::run::{FrameSet, PipelineConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub facade_width: f64,
    pub facade_height: f64,
    pub building_depth: f64,
    pub window_columns: usize,
    pub window_rows: usize,
    pub window_width: f64,
    pub window_height: f64,
    pub door: bool,
    pub door_width: f64,
    pub door_height: f64,
    /// Depth of window and door panels behind the wall plane.
    pub recess: f64,
    /// Ground strip extent in front of the facade.
    pub ground_depth: f64,
    /// Ground strip overhang beyond the side walls.
    pub ground_margin: f64,
    /// Ridge height above the eaves; 0 leaves the roof out.
    pub roof_rise: f64,
    pub scan_rate: f64,
    pub noise_sigma: f64,
    /// Fraction of the scan's x extent removed (largest x first).
    pub crop_fraction: f64,
    pub clutter_points: usize,
    /// Scan → model. Drawn from the seed when absent.
    pub gt_transform: Option<RigidTransform>,
    /// Bounds for a drawn transform.
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub frames: usize,
    pub camera: CameraModel,
    pub camera_distance: f64,
    pub camera_height: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            facade_width: 20.0,
            facade_height: 10.0,
            building_depth: 6.0,
            window_columns: 4,
            window_rows: 2,
            window_width: 1.5,
            window_height: 2.0,
            door: true,
            door_width: 1.5,
            door_height: 2.5,
            recess: 0.2,
            ground_depth: 5.0,
            ground_margin: 2.0,
            roof_rise: 2.0,
            scan_rate: 0.05,
            noise_sigma: 0.02,
            crop_fraction: 0.3,
            clutter_points: 500,
            gt_transform: None,
            max_rotation_deg: 30.0,
            max_translation: 10.0,
            frames: 3,
            camera: CameraModel {
                f: 400.0,
                s: 1.0,
                cx: 319.5,
                cy: 239.5,
                width: 640,
                height: 480,
            },
            camera_distance: 15.0,
            camera_height: 1.5,
            seed: 42,
        }
    }
}

/// Axis-aligned rectangle on the facade: `x ∈ [x0, x1]`, `z ∈ [z0, z1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Opening {
    x0: f64,
    x1: f64,
    z0: f64,
    z1: f64,
}

impl Opening {
    fn overlaps(&self, o: &Opening) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.z0 < o.z1 && o.z0 < self.z1
    }

    fn ring(&self, y: f64) -> Vec<Point3> {
        vec![
            Point3::new(self.x0, y, self.z0),
            Point3::new(self.x1, y, self.z0),
            Point3::new(self.x1, y, self.z1),
            Point3::new(self.x0, y, self.z1),
        ]
    }
}

impl SyntheticSceneSpec {
    fn windows(&self) -> Vec<Opening> {
        let (w, h) = (self.facade_width, self.facade_height);
        let mut out = Vec::new();
        for r in 0..self.window_rows {
            let zc = h * (r as f64 + 0.5) / self.window_rows as f64;
            for c in 0..self.window_columns {
                let xc = w * (c as f64 + 0.5) / self.window_columns as f64;
                out.push(Opening {
                    x0: xc - self.window_width / 2.0,
                    x1: xc + self.window_width / 2.0,
                    z0: zc - self.window_height / 2.0,
                    z1: zc + self.window_height / 2.0,
                });
            }
        }
        out
    }

    fn door_opening(&self) -> Option<Opening> {
        self.door.then(|| Opening {
            x0: self.facade_width / 2.0 - self.door_width / 2.0,
            x1: self.facade_width / 2.0 + self.door_width / 2.0,
            z0: 0.0,
            z1: self.door_height,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Spec(m));
        let positive = [
            ("facade_width", self.facade_width),
            ("facade_height", self.facade_height),
            ("building_depth", self.building_depth),
            ("scan_rate", self.scan_rate),
            ("camera_distance", self.camera_distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("recess", self.recess),
            ("ground_depth", self.ground_depth),
            ("ground_margin", self.ground_margin),
            ("roof_rise", self.roof_rise),
            ("noise_sigma", self.noise_sigma),
            ("max_rotation_deg", self.max_rotation_deg),
            ("max_translation", self.max_translation),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be ≥ 0, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.crop_fraction) {
            return bad(format!("crop_fraction must be in [0, 1), got {}", self.crop_fraction));
        }
        if self.window_columns * self.window_rows > 0 && !(self.window_width > 0.0 && self.window_height > 0.0) {
            return bad("window size must be positive".into());
        }
        if self.door && !(self.door_width > 0.0 && self.door_height > 0.0) {
            return bad("door size must be positive".into());
        }
        let windows = self.windows();
        for (k, o) in windows.iter().enumerate() {
            if !(o.x0 > 0.0 && o.x1 < self.facade_width && o.z0 > 0.0 && o.z1 < self.facade_height) {
                return bad(format!("window {k} does not fit inside the facade"));
            }
            if windows[..k].iter().any(|p| p.overlaps(o)) {
                return bad(format!("window {k} overlaps another window"));
            }
        }
        if let Some(d) = self.door_opening() {
            if !(d.x0 > 0.0 && d.x1 < self.facade_width && d.z1 < self.facade_height) {
                return bad("door does not fit inside the facade".into());
            }
            if windows.iter().any(|w| w.overlaps(&d)) {
                return bad("door overlaps a window".into());
            }
        }
        if let Some(gt) = &self.gt_transform {
            gt.validate()?;
        }
        self.camera.validate()?;
        Ok(())
    }

    /// Scan → model transform: the given one, or a draw from the seed.
    pub fn ground_truth(&self) -> RigidTransform {
        match self.gt_transform {
            Some(t) => t,
            None => random_transform(
                &mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0f97),
                self.max_rotation_deg,
                self.max_translation,
            ),
        }
    }

    /// The semantic model. Surface order: walls, windows, door, ground,
    /// roof.
    pub fn model(&self) -> Result<BuildingModel> {
        self.validate()?;
        let (w, h, d) = (self.facade_width, self.facade_height, self.building_depth);
        let mut outer = vec![Point3::new(0.0, 0.0, 0.0)];
        if let Some(door) = self.door_opening() {
            // notch the bottom edge for the door
            outer.extend([
                Point3::new(door.x0, 0.0, 0.0),
                Point3::new(door.x0, 0.0, door.z1),
                Point3::new(door.x1, 0.0, door.z1),
                Point3::new(door.x1, 0.0, 0.0),
            ]);
        }
        outer.extend([
            Point3::new(w, 0.0, 0.0),
            Point3::new(w, 0.0, h),
            Point3::new(0.0, 0.0, h),
        ]);
        let mut facade = SemanticSurface::new(SemanticClass::Wall, "wall_front", outer);
        for o in self.windows() {
            facade = facade.with_hole(o.ring(0.0));
        }
        let mut surfaces = vec![
            facade,
            SemanticSurface::new(
                SemanticClass::Wall,
                "wall_left",
                vec![
                    Point3::new(0.0, 0.0, 0.0),
                    Point3::new(0.0, d, 0.0),
                    Point3::new(0.0, d, h),
                    Point3::new(0.0, 0.0, h),
                ],
            ),
            SemanticSurface::new(
                SemanticClass::Wall,
                "wall_right",
                vec![
                    Point3::new(w, 0.0, 0.0),
                    Point3::new(w, 0.0, h),
                    Point3::new(w, d, h),
                    Point3::new(w, d, 0.0),
                ],
            ),
        ];
        for (k, o) in self.windows().iter().enumerate() {
            surfaces.push(SemanticSurface::new(
                SemanticClass::Window,
                format!("window_{}", k + 1),
                o.ring(self.recess),
            ));
        }
        if let Some(door) = self.door_opening() {
            surfaces.push(SemanticSurface::new(
                SemanticClass::Door,
                "door_1",
                door.ring(self.recess),
            ));
        }
        if self.ground_depth > 0.0 {
            let m = self.ground_margin;
            surfaces.push(SemanticSurface::new(
                SemanticClass::Ground,
                "ground",
                vec![
                    Point3::new(-m, -self.ground_depth, 0.0),
                    Point3::new(w + m, -self.ground_depth, 0.0),
                    Point3::new(w + m, 0.0, 0.0),
                    Point3::new(-m, 0.0, 0.0),
                ],
            ));
        }
        if self.roof_rise > 0.0 {
            surfaces.push(SemanticSurface::new(
                SemanticClass::Roof,
                "roof_front",
                vec![
                    Point3::new(0.0, 0.0, h),
                    Point3::new(w, 0.0, h),
                    Point3::new(w, d / 2.0, h + self.roof_rise),
                    Point3::new(0.0, d / 2.0, h + self.roof_rise),
                ],
            ));
        }
        let model = BuildingModel { surfaces };
        model.validate()?;
        Ok(model)
    }
}

/// Uniform random axis, angle uniform in `[0, max_deg]`, translation of
/// uniform direction and length in `[0, max_t]`.
pub fn random_transform(rng: &mut impl Rng, max_deg: f64, max_t: f64) -> RigidTransform {
    let unit = |rng: &mut dyn rand::RngCore| loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let axis = unit(rng);
    let angle = rng.random_range(0.0..=max_deg).to_radians();
    let dir = unit(rng);
    let len = rng.random_range(0.0..=max_t);
    RigidTransform::from_axis_angle(&axis, angle, dir * len)
}

/// Analytic thermal field on model-frame surface points.
pub fn thermal_field(label: SemanticClass, p: &Point3) -> f64 {
    let v = match label {
        SemanticClass::Wall => 0.35 + 0.02 * p.z + 0.03 * (0.5 * p.x).sin(),
        SemanticClass::Window => 0.75 - 0.01 * p.z,
        SemanticClass::Door => 0.6,
        SemanticClass::Ground => 0.25 - 0.01 * p.y,
        SemanticClass::Roof => 0.5 + 0.01 * p.x,
        SemanticClass::Unlabeled => 0.0,
    };
    v.clamp(0.0, 1.0)
}

/// Image value where no surface is hit.
pub const SKY: f64 = 0.05;

struct Caster {
    frame: PlaneFrame,
    outer: Vec<Vector2d>,
    holes: Vec<Vec<Vector2d>>,
    label: SemanticClass,
}

impl Caster {
    fn new(s: &SemanticSurface) -> Result<Self> {
        let frame = s.validate()?;
        let uv = |ring: &[Point3]| ring.iter().map(|p| frame.to_uv(p).0).collect::<Vec<_>>();
        Ok(Self {
            outer: uv(&s.outer),
            holes: s.holes.iter().map(|h| uv(h)).collect(),
            frame,
            label: s.label,
        })
    }

    /// Ray parameter and hit point, if the ray meets the polygon.
    fn hit(&self, origin: &Point3, dir: &Vector3) -> Option<(f64, Point3)> {
        let denom = self.frame.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.frame.normal.dot(&(self.frame.origin - origin)) / denom;
        if t <= 0.0 {
            return None;
        }
        let p = origin + dir * t;
        let (uv, _) = self.frame.to_uv(&p);
        point_in_polygon(&uv, &self.outer, &self.holes).then_some((t, p))
    }
}

/// Nearest surface hit along a ray: label and point.
pub struct RayCaster {
    casters: Vec<Caster>,
}

impl RayCaster {
    pub fn new(model: &BuildingModel) -> Result<Self> {
        Ok(Self {
            casters: model.surfaces.iter().map(Caster::new).collect::<Result<_>>()?,
        })
    }

    /// First surface hit; exact ties go to the earlier surface.
    pub fn cast(&self, origin: &Point3, dir: &Vector3) -> Option<(SemanticClass, Point3)> {
        let mut best: Option<(f64, SemanticClass, Point3)> = None;
        for c in &self.casters {
            if let Some((t, p)) = c.hit(origin, dir) {
                if best.as_ref().is_none_or(|b| t < b.0) {
                    best = Some((t, c.label, p));
                }
            }
        }
        best.map(|(_, l, p)| (l, p))
    }

    /// Casts the ray through pixel center `(x, y)` of a camera posed by
    /// `world_to_camera`.
    pub fn cast_pixel(
        &self,
        cam: &CameraModel,
        world_to_camera: &RigidTransform,
        x: usize,
        y: usize,
    ) -> Option<(SemanticClass, Point3)> {
        let dc = Vector3::new((x as f64 - cam.cx) / (cam.s * cam.f), (y as f64 - cam.cy) / cam.f, 1.0);
        let inv = world_to_camera.inverse();
        let origin = Point3::from(*inv.translation());
        self.cast(&origin, &inv.apply_vector(&dc))
    }
}

/// World → camera pose for a camera at `center` looking along `+y` with
/// image `y` pointing down.
pub fn street_camera(center: Point3) -> RigidTransform {
    let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    RigidTransform::new(r, -(r * center.coords)).expect("fixed rotation is proper")
}

/// Renders the thermal field of `model` for a model-frame pose.
pub fn render_frame(caster: &RayCaster, cam: &CameraModel, world_to_camera: &RigidTransform) -> Result<Image> {
    let data: Vec<f64> = (0..cam.width * cam.height)
        .into_par_iter()
        .map(|k| {
            let (x, y) = (k % cam.width, k / cam.width);
            match caster.cast_pixel(cam, world_to_camera, x, y) {
                Some((label, p)) => thermal_field(label, &p),
                None => SKY,
            }
        })
        .collect();
    Ok(Image::new(cam.width, cam.height, data)?)
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SyntheticSceneSpec,
    pub model: BuildingModel,
    /// Scan in its own frame, positions only.
    pub scan: PointCloud,
    /// Generating surface label and id per scan point; clutter is
    /// Unlabeled with an empty id.
    pub scan_truth: PointCloud,
    /// Scan → model.
    pub gt: RigidTransform,
    pub camera: CameraModel,
    /// Poses map scan coordinates to camera coordinates.
    pub frames: Vec<FramePose>,
}

impl SyntheticScene {
    pub fn clutter_mask(&self) -> Vec<bool> {
        self.scan_truth
            .labels()
            .iter()
            .map(|l| *l == SemanticClass::Unlabeled)
            .collect()
    }
}

pub fn generate(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    let model = spec.model()?;
    let gt = spec.ground_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // dense resampling of every surface, in model coordinates
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for s in &model.surfaces {
        let pts = sample_surface(s, spec.scan_rate)?;
        labels.extend(std::iter::repeat_n(s.label, pts.len()));
        ids.extend(std::iter::repeat_n(s.id.clone(), pts.len()));
        points.extend(pts);
    }

    if spec.crop_fraction > 0.0 {
        let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
        let cut = hi - spec.crop_fraction * (hi - lo);
        let keep: Vec<usize> = (0..points.len()).filter(|&i| points[i].x <= cut).collect();
        points = keep.iter().map(|&i| points[i]).collect();
        labels = keep.iter().map(|&i| labels[i]).collect();
        ids = keep.iter().map(|&i| ids[i].clone()).collect();
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| PipelineError::Spec(e.to_string()))?;
        for p in &mut points {
            *p += Vector3::new(
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            );
        }
    }

    // clutter: a volume in front of the facade, above the ground
    let visible_w = spec.facade_width * (1.0 - spec.crop_fraction);
    let (x_lo, x_hi) = (0.1 * visible_w, 0.9 * visible_w);
    let y_lo = -(spec.ground_depth.max(1.0)) * 0.8;
    let y_hi = -(spec.ground_depth.max(1.0)) * 0.2;
    for _ in 0..spec.clutter_points {
        points.push(Point3::new(
            rng.random_range(x_lo..x_hi),
            rng.random_range(y_lo..y_hi),
            rng.random_range(0.3..2.5),
        ));
        labels.push(SemanticClass::Unlabeled);
        ids.push(String::new());
    }

    let to_scan = gt.inverse();
    let scan_points: Vec<Point3> = points.iter().map(|p| to_scan.apply(p)).collect();
    let scan = PointCloud::new(scan_points)?;
    let scan_truth = scan.clone().with_labels(labels)?.with_ids(ids)?;

    let caster = RayCaster::new(&model)?;
    let frames = (0..spec.frames)
        .map(|k| {
            let x = spec.facade_width * (k as f64 + 0.5) / spec.frames as f64;
            let pose = street_camera(Point3::new(x, -spec.camera_distance, spec.camera_height));
            let image = render_frame(&caster, &spec.camera, &pose)?;
            Ok(FramePose {
                // scan → model → camera
                transform: pose.compose(&gt),
                image,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticScene {
        spec: spec.clone(),
        model,
        scan,
        scan_truth,
        gt,
        camera: spec.camera,
        frames,
    })
}

/// Files written by [`write_scene`], relative to its directory.
pub const SCENE_FILES: [&str; 7] = [
    "model.json",
    "scan.ply",
    "scan_truth.ply",
    "gt_transform.json",
    "camera.json",
    "poses.json",
    "pipeline.json",
];

/// ICP correspondence distance used in generated pipeline configs. The
/// clutter volume sits within 2 m of the ground, so the general default
/// would pair clutter with the model.
pub const SCENE_ICP_D_MAX: f64 = 0.5;

/// Pipeline configuration for a scene written by [`write_scene`].
pub fn scene_pipeline_config(scene: &SyntheticScene) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        frames: (!scene.frames.is_empty()).then(|| FrameSet {
            camera: PathBuf::from("camera.json"),
            poses: PathBuf::from("poses.json"),
        }),
        ..Default::default()
    };
    cfg.registration.icp.d_max = SCENE_ICP_D_MAX;
    cfg.registration.seed = scene.spec.seed;
    cfg
}

/// Writes model, scan, ground truth, camera, poses with 16-bit frames
/// under `images/`, the spec echo and a ready-to-run pipeline config.
pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<()> {
    io::write_json(&dir.join("model.json"), &scene.model)?;
    io::write_ply(&dir.join("scan.ply"), &scene.scan)?;
    io::write_ply(&dir.join("scan_truth.ply"), &scene.scan_truth)?;
    io::write_json(&dir.join("gt_transform.json"), &scene.gt)?;
    io::write_json(&dir.join("camera.json"), &scene.camera)?;
    let mut poses = Vec::new();
    for (k, frame) in scene.frames.iter().enumerate() {
        let rel = PathBuf::from("images").join(format!("frame_{k:03}.pgm"));
        io::write_pgm(&dir.join(&rel), &frame.image, true)?;
        poses.push(io::PoseEntry::new(rel, &frame.transform));
    }
    io::write_json(&dir.join("poses.json"), &poses)?;
    let mut spec = scene.spec.clone();
    spec.gt_transform = Some(scene.gt);
    io::write_json(&dir.join("spec.json"), &spec)?;
    io::write_json(&dir.join("pipeline.json"), &scene_pipeline_config(scene))?;
    Ok(())
}
