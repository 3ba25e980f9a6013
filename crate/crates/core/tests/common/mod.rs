#![allow(dead_code)]

use lodtherm::geometry::{Point3, PointCloud, RigidTransform, SemanticClass, Vector3};
use lodtherm::sampling::{sample_model, BuildingModel, SamplingParams, SemanticSurface};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn rect_xz(x0: f64, x1: f64, z0: f64, z1: f64, y: f64) -> Vec<Point3> {
    vec![
        Point3::new(x0, y, z0),
        Point3::new(x1, y, z0),
        Point3::new(x1, y, z1),
        Point3::new(x0, y, z1),
    ]
}

/// Small building: front wall with two recessed windows, a side wall, a
/// ground strip and a sloped roof. Surfaces stay 5 cm apart so no two of
/// them produce coincident samples.
pub fn small_building() -> BuildingModel {
    let windows = [(1.5, 3.0, 1.5, 3.5), (5.0, 6.5, 1.5, 3.5)];
    let mut front = SemanticSurface::new(SemanticClass::Wall, "front", rect_xz(0.0, 8.0, 0.0, 5.0, 0.0));
    for &(x0, x1, z0, z1) in &windows {
        front = front.with_hole(rect_xz(x0, x1, z0, z1, 0.0));
    }
    let mut surfaces = vec![
        front,
        SemanticSurface::new(
            SemanticClass::Wall,
            "side",
            vec![
                Point3::new(0.0, 0.05, 0.05),
                Point3::new(0.0, 4.0, 0.05),
                Point3::new(0.0, 4.0, 5.0),
                Point3::new(0.0, 0.05, 5.0),
            ],
        ),
    ];
    for (k, &(x0, x1, z0, z1)) in windows.iter().enumerate() {
        surfaces.push(SemanticSurface::new(
            SemanticClass::Window,
            format!("window_{k}"),
            rect_xz(x0, x1, z0, z1, 0.2),
        ));
    }
    surfaces.push(SemanticSurface::new(
        SemanticClass::Ground,
        "ground",
        vec![
            Point3::new(-1.0, -4.0, 0.0),
            Point3::new(9.0, -4.0, 0.0),
            Point3::new(9.0, -0.05, 0.0),
            Point3::new(-1.0, -0.05, 0.0),
        ],
    ));
    surfaces.push(SemanticSurface::new(
        SemanticClass::Roof,
        "roof",
        vec![
            Point3::new(0.0, 0.05, 5.05),
            Point3::new(8.0, 0.05, 5.05),
            Point3::new(8.0, 2.0, 6.5),
            Point3::new(0.0, 2.0, 6.5),
        ],
    ));
    BuildingModel { surfaces }
}

pub fn sampled(model: &BuildingModel, rate: f64) -> PointCloud {
    sample_model(model, &SamplingParams { rate }).unwrap()
}

pub fn with_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let pts = cloud
        .points()
        .iter()
        .map(|p| p + Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)))
        .collect();
    cloud.with_points(pts).unwrap()
}

pub fn random_transform(rng: &mut impl Rng, max_deg: f64, max_t: f64) -> RigidTransform {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-6 { Vector3::z() } else { axis };
    let t = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    RigidTransform::from_axis_angle(&axis, rng.random_range(0.0..max_deg).to_radians(), t * max_t)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
