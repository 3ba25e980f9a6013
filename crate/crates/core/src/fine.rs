//! Refinement after global alignment: main planes, height and center
//! rectification, then point-to-plane ICP.

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{estimate_normals, NormalCloud, NormalParams};
use crate::geometry::{Plane, Point3, PointCloud, RigidTransform, Vector3};
use crate::linalg;
use crate::metrics::{evaluate_with_index, RegistrationReport};
use crate::spatial::SpatialIndex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub distance_threshold: f64,
    pub iterations: usize,
    /// A plane needs at least this fraction of the whole cloud as inliers.
    pub min_inlier_fraction: f64,
    pub plane_count: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            distance_threshold: 0.05,
            iterations: 500,
            min_inlier_fraction: 0.05,
            plane_count: 3,
            seed: 42,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0) {
            return Err(Error::InvalidParameter(
                "RANSAC distance threshold must be positive".into(),
            ));
        }
        if self.iterations == 0 || self.plane_count == 0 {
            return Err(Error::InvalidParameter(
                "RANSAC iterations and plane count must be ≥ 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_inlier_fraction) {
            return Err(Error::InvalidParameter(
                "minimum inlier fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn plane_through(a: &Point3, b: &Point3, c: &Point3) -> Option<(Vector3, f64)> {
    let n = (b - a).cross(&(c - a));
    let scale = (b - a).norm_squared().max((c - a).norm_squared());
    let len = n.norm();
    if !(len > 1e-9 * scale) {
        return None;
    }
    let n = n / len;
    Some((n, n.dot(&a.coords)))
}

fn inliers_of(points: &[Point3], candidates: &[usize], normal: &Vector3, offset: f64, threshold: f64) -> Vec<usize> {
    candidates
        .par_iter()
        .copied()
        .filter(|&i| (normal.dot(&points[i].coords) - offset).abs() <= threshold)
        .collect()
}

/// Sequential RANSAC: the best plane is refit by least squares on its
/// inliers, those inliers are removed and the search repeats. Planes are
/// returned by descending inlier count.
pub fn ransac_plane(cloud: &PointCloud, params: &RansacParams) -> Result<Vec<Plane>> {
    params.validate()?;
    let pts = cloud.points();
    let min_inliers = ((params.min_inlier_fraction * pts.len() as f64).ceil() as usize).max(3);
    if pts.len() < 3 {
        return Err(Error::NoPlane { min_inliers });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut remaining: Vec<usize> = (0..pts.len()).collect();
    let mut planes = Vec::new();
    while planes.len() < params.plane_count && remaining.len() >= 3 {
        let mut best: Option<(usize, Vector3, f64)> = None;
        for _ in 0..params.iterations {
            let n = remaining.len();
            let (a, b, c) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
            if a == b || b == c || a == c {
                continue;
            }
            let Some((normal, offset)) = plane_through(&pts[remaining[a]], &pts[remaining[b]], &pts[remaining[c]])
            else {
                continue;
            };
            let count = remaining
                .par_iter()
                .filter(|&&i| (normal.dot(&pts[i].coords) - offset).abs() <= params.distance_threshold)
                .count();
            if best.as_ref().is_none_or(|b| count > b.0) {
                best = Some((count, normal, offset));
            }
        }
        let Some((_, normal, offset)) = best else { break };
        let first = inliers_of(pts, &remaining, &normal, offset, params.distance_threshold);
        let subset: Vec<Point3> = first.iter().map(|&i| pts[i]).collect();
        let (normal, offset) = match Plane::fit(&subset) {
            Some((n, d, _)) => (n, d),
            None => (normal, offset),
        };
        let inliers = inliers_of(pts, &remaining, &normal, offset, params.distance_threshold);
        if inliers.len() < min_inliers {
            break;
        }
        let members: Vec<Point3> = inliers.iter().map(|&i| pts[i]).collect();
        let centroid = crate::geometry::centroid(&members).expect("non-empty inlier set");
        let taken: std::collections::HashSet<usize> = inliers.iter().copied().collect();
        remaining.retain(|i| !taken.contains(i));
        planes.push(Plane {
            normal,
            offset,
            centroid,
            inliers,
        });
    }
    if planes.is_empty() {
        return Err(Error::NoPlane { min_inliers });
    }
    planes.sort_by_key(|p| std::cmp::Reverse(p.inliers.len()));
    Ok(planes)
}

/// A plane whose normal is within this angle of vertical counts as
/// horizontal and cannot anchor the center rectification.
pub const HORIZONTAL_PLANE_ANGLE_DEG: f64 = 30.0;

pub fn is_near_horizontal(plane: &Plane) -> bool {
    plane.normal.z.abs() > HORIZONTAL_PLANE_ANGLE_DEG.to_radians().cos()
}

/// The largest plane that is not near-horizontal.
pub fn main_plane(planes: &[Plane]) -> Option<&Plane> {
    planes.iter().find(|p| !is_near_horizontal(p))
}

/// Percentile of the z coordinates, linear interpolation between ranks.
pub fn height_percentile(points: &[Point3], q: f64) -> Option<f64> {
    if points.is_empty() {
        return None;
    }
    let mut z: Vec<f64> = points.iter().map(|p| p.z).collect();
    z.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (z.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(z[lo] + (z[hi] - z[lo]) * (pos - lo as f64))
}

pub const BASE_HEIGHT_PERCENTILE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectification {
    pub transform: RigidTransform,
    /// True when the main plane was near-horizontal and nothing was done.
    pub skipped: bool,
}

/// Translation that lifts the source base height to the target's and
/// moves the source main-plane centroid onto the target main plane along
/// the horizontal part of the target normal.
pub fn rectify(
    source: &PointCloud,
    source_plane: &Plane,
    target: &PointCloud,
    target_plane: &Plane,
) -> Result<Rectification> {
    if is_near_horizontal(source_plane) || is_near_horizontal(target_plane) {
        log::warn!("main plane is near-horizontal; rectification skipped");
        return Ok(Rectification {
            transform: RigidTransform::identity(),
            skipped: true,
        });
    }
    let zs = height_percentile(source.points(), BASE_HEIGHT_PERCENTILE).ok_or(Error::EmptyInput("source cloud"))?;
    let zt = height_percentile(target.points(), BASE_HEIGHT_PERCENTILE).ok_or(Error::EmptyInput("target cloud"))?;
    let nh = Vector3::new(target_plane.normal.x, target_plane.normal.y, 0.0).normalize();
    let shift = (target_plane.centroid - source_plane.centroid).dot(&nh);
    let t = nh * shift + Vector3::new(0.0, 0.0, zt - zs);
    Ok(Rectification {
        transform: RigidTransform::from_translation(t),
        skipped: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    /// Maximal correspondence distance.
    pub d_max: f64,
    /// Stop once the correspondence RMSE is at or below this.
    pub t_rmse: f64,
    /// Maximum iterations.
    pub t_it: usize,
    /// Stop early when an update moves the pose by less than this
    /// (radians + meters); such runs are reported as not converged.
    pub stall_tolerance: f64,
    /// Radius for target normals when they are estimated here.
    pub normal_radius: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            d_max: 2.0,
            t_rmse: 0.05,
            t_it: 50,
            stall_tolerance: 1e-9,
            normal_radius: 0.3,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > 0.0 && self.t_rmse > 0.0 && self.t_it > 0 && self.normal_radius > 0.0) {
            return Err(Error::InvalidParameter(
                "ICP d_max, t_rmse, t_it and normal radius must be positive".into(),
            ));
        }
        if !(self.stall_tolerance >= 0.0) {
            return Err(Error::InvalidParameter("stall tolerance must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Per-iteration ICP record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpStep {
    pub correspondences: usize,
    /// `Σ e²` of the linearized point-to-plane residuals before the solve.
    pub linearized_before: f64,
    /// The same sum evaluated at the solution of the linear system.
    pub linearized_after: f64,
    /// Point distance RMSE over pairs within `d_max` after the update.
    pub rmse: f64,
}

struct Pairs {
    /// (source index, target index, distance)
    list: Vec<(usize, usize, f64)>,
}

fn correspond(source: &[Point3], t: &RigidTransform, index: &SpatialIndex, normals: &NormalCloud, d_max: f64) -> Pairs {
    let list = source
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (j, d) = index.nearest(&t.apply(p));
            (d <= d_max && normals.valid[j]).then_some((i, j, d))
        })
        .collect();
    Pairs { list }
}

fn rmse(pairs: &Pairs) -> f64 {
    let s: f64 = pairs.list.iter().map(|&(_, _, d)| d * d).sum();
    (s / pairs.list.len() as f64).sqrt()
}

/// ICP minimizing `Σ ((R·q + T − p)·n_p)²` over nearest-neighbor pairs.
/// Returns the report together with the per-iteration records.
pub fn icp_point_to_plane_traced(
    source: &PointCloud,
    target: &PointCloud,
    target_normals: &NormalCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<(RegistrationReport, Vec<IcpStep>)> {
    params.validate()?;
    init.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyInput("ICP source cloud"));
    }
    if target_normals.len() != target.len() {
        return Err(Error::InvalidParameter(format!(
            "{} target normals for {} target points",
            target_normals.len(),
            target.len()
        )));
    }
    let index = SpatialIndex::new(target.points())?;
    let src = source.points();
    let tgt = target.points();
    let mut transform = *init;
    let mut steps = Vec::new();
    let mut converged = false;
    let mut pairs = correspond(src, &transform, &index, target_normals, params.d_max);

    for iteration in 1..=params.t_it {
        if pairs.list.is_empty() {
            return Err(Error::Divergence {
                iteration,
                max_distance: params.d_max,
                last: Box::new(transform),
            });
        }
        let moved: Vec<Point3> = pairs.list.iter().map(|&(i, _, _)| transform.apply(&src[i])).collect();
        let center = moved.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / moved.len() as f64;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        let mut rows = Vec::with_capacity(moved.len());
        for (x, &(_, j, _)) in moved.iter().zip(&pairs.list) {
            let n = target_normals.normals[j];
            let e = (x - tgt[j]).dot(&n);
            let xc = x.coords - center;
            let c = xc.cross(&n);
            let row = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
            jtj += row * row.transpose();
            jtr += row * e;
            rows.push((row, e));
        }
        let delta = linalg::solve_normal_equations(&jtj, &(-jtr));
        let linearized_before: f64 = rows.iter().map(|(_, e)| e * e).sum();
        let linearized_after: f64 = rows
            .iter()
            .map(|(row, e)| {
                let r = e + row.dot(&delta);
                r * r
            })
            .sum();
        transform = linalg::centered_update(&transform, &delta, &center);
        pairs = correspond(src, &transform, &index, target_normals, params.d_max);
        if pairs.list.is_empty() {
            return Err(Error::Divergence {
                iteration,
                max_distance: params.d_max,
                last: Box::new(transform),
            });
        }
        let current = rmse(&pairs);
        steps.push(IcpStep {
            correspondences: pairs.list.len(),
            linearized_before,
            linearized_after,
            rmse: current,
        });
        if current <= params.t_rmse {
            converged = true;
            break;
        }
        let motion =
            Vector3::new(delta[0], delta[1], delta[2]).norm() + Vector3::new(delta[3], delta[4], delta[5]).norm();
        if motion < params.stall_tolerance {
            break;
        }
    }
    let metrics = evaluate_with_index(source, &index, &transform, params.d_max)?;
    let report = RegistrationReport {
        transform,
        fitness: metrics.fitness,
        rmse: metrics.rmse,
        inlier_count: metrics.inlier_count,
        iterations: steps.len(),
        converged,
        rmse_trace: steps.iter().map(|s| s.rmse).collect(),
    };
    Ok((report, steps))
}

pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    target_normals: &NormalCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationReport> {
    icp_point_to_plane_traced(source, target, target_normals, init, params).map(|(r, _)| r)
}

/// Output of [`register_fine`].
#[derive(Clone, Debug, PartialEq)]
pub struct FineOutcome {
    /// Transform maps the original source onto the target.
    pub report: RegistrationReport,
    pub rectification: Rectification,
    pub icp_steps: Vec<IcpStep>,
}

/// Coarse transform, main-plane rectification, then ICP seeded with the
/// composition.
pub fn register_fine(
    source: &PointCloud,
    target: &PointCloud,
    coarse: &RigidTransform,
    ransac: &RansacParams,
    icp: &IcpParams,
) -> Result<FineOutcome> {
    coarse.validate()?;
    icp.validate()?;
    let moved = source.transformed(coarse);
    let source_planes = ransac_plane(&moved, ransac)?;
    let target_planes = ransac_plane(target, ransac)?;
    let rectification = match (main_plane(&source_planes), main_plane(&target_planes)) {
        (Some(s), Some(t)) => rectify(&moved, s, target, t)?,
        _ => {
            log::warn!("no vertical main plane; rectification skipped");
            Rectification {
                transform: RigidTransform::identity(),
                skipped: true,
            }
        }
    };
    let init = rectification.transform.compose(coarse);
    let normals = estimate_normals(target, &NormalParams::with_radius(icp.normal_radius))?;
    let (report, icp_steps) = icp_point_to_plane_traced(source, target, &normals, &init, icp)?;
    Ok(FineOutcome {
        report,
        rectification,
        icp_steps,
    })
}
