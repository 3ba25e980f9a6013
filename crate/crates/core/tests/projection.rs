mod common;

use lodtherm::geometry::{Point3, RigidTransform, SemanticClass, Vector3};
use lodtherm::projection::{
    back_project_labels, colorize_cloud, project_point, CameraModel, FramePose, Image, OcclusionParams, Sampling,
};
use lodtherm::sampling::{BuildingModel, SemanticSurface};
use rand::Rng;

fn camera() -> CameraModel {
    CameraModel {
        f: 250.0,
        s: 1.0,
        cx: 159.5,
        cy: 119.5,
        width: 320,
        height: 240,
    }
}

/// World → camera for a camera at `center` looking along +y, image rows
/// going down in z.
fn street_pose(center: Point3) -> RigidTransform {
    let r = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    RigidTransform::new(r, -(r * center.coords)).unwrap()
}

fn inside_2d(p: (f64, f64), ring: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[(i + n - 1) % n];
        if (yi > p.1) != (yj > p.1) && p.0 < (xj - xi) * (p.1 - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

/// Drops the dominant normal axis.
fn flatten(p: &Point3, n: &Vector3) -> (f64, f64) {
    let a = n.abs();
    if a.x >= a.y && a.x >= a.z {
        (p.y, p.z)
    } else if a.y >= a.z {
        (p.x, p.z)
    } else {
        (p.x, p.y)
    }
}

fn hit(surface: &SemanticSurface, origin: &Point3, dir: &Vector3) -> Option<f64> {
    let o = &surface.outer;
    let n = (o[1] - o[0]).cross(&(o[2] - o[0]));
    let denom = n.dot(dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = n.dot(&(o[0] - origin)) / denom;
    if t <= 0.0 {
        return None;
    }
    let x = origin + dir * t;
    let q = flatten(&x, &n);
    let ring = |r: &[Point3]| r.iter().map(|p| flatten(p, &n)).collect::<Vec<_>>();
    if !inside_2d(q, &ring(o)) || surface.holes.iter().any(|h| inside_2d(q, &ring(h))) {
        return None;
    }
    Some(t)
}

/// Label of the first surface hit by the ray through each pixel center.
fn rasterize(
    model: &BuildingModel,
    cam: &CameraModel,
    center: Point3,
    pose: &RigidTransform,
) -> Vec<Option<SemanticClass>> {
    let rt = pose.rotation().transpose();
    let mut out = Vec::with_capacity(cam.width * cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let dc = Vector3::new((x as f64 - cam.cx) / (cam.s * cam.f), (y as f64 - cam.cy) / cam.f, 1.0);
            let dir = rt * dc;
            let best = model
                .surfaces
                .iter()
                .filter_map(|s| hit(s, &center, &dir).map(|t| (t, s.label)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            out.push(best.map(|b| b.1));
        }
    }
    out
}

#[test]
fn back_projection_agrees_with_polygon_rasterization() {
    let model = common::small_building();
    let cloud = common::sampled(&model, 0.02);
    let cam = camera();
    // silhouette pixels whose center misses the polygon can still catch an
    // edge sample, so agreement is bounded by the outline length
    let center = Point3::new(4.0, -14.0, 2.5);
    let pose = street_pose(center);
    let image = back_project_labels(&cloud, &cam, &pose).unwrap();
    let oracle = rasterize(&model, &cam, center, &pose);
    let agree = image.pixels.iter().zip(&oracle).filter(|(a, b)| a == b).count();
    let fg = oracle.iter().filter(|p| p.is_some()).count();
    let ratio = agree as f64 / oracle.len() as f64;
    assert!(fg > oracle.len() / 5, "scene should fill much of the view, {fg} px");
    assert!(ratio >= 0.99, "agreement {ratio:.4} from {center:?}");
}

#[test]
fn colorizing_from_back_projected_labels_recovers_each_label() {
    let model = common::small_building();
    let cloud = common::sampled(&model, 0.05);
    let cam = camera();
    let pose = street_pose(Point3::new(3.0, -13.0, 2.0));
    let labels = back_project_labels(&cloud, &cam, &pose).unwrap();
    let data = labels
        .pixels
        .iter()
        .map(|p| p.map_or(0.0, |c| c.code() as f64 / 255.0))
        .collect();
    let image = Image::new(cam.width, cam.height, data).unwrap();
    let params = OcclusionParams {
        depth_tolerance: 0.0,
        sampling: Sampling::Nearest,
        ..Default::default()
    };
    let out = colorize_cloud(&cloud, &cam, &[FramePose { transform: pose, image }], &params).unwrap();
    let mut seen = 0;
    for (v, l) in out.intensity().iter().zip(out.labels()) {
        if let Some(v) = v {
            assert_eq!(*v, l.code() as f64 / 255.0);
            seen += 1;
        }
    }
    assert!(seen > 1000);
}

#[test]
fn projection_never_returns_points_behind_the_camera() {
    let cam = camera();
    let mut rng = common::rng(5);
    for _ in 0..10_000 {
        let pose = common::random_transform(&mut rng, 180.0, 20.0);
        let p = Point3::new(
            rng.random_range(-30.0..30.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(-30.0..30.0),
        );
        if pose.apply(&p).z <= 0.0 {
            assert!(project_point(&cam, &pose, &p).is_none());
        }
    }
}
