//! Feature-based global alignment (fast global registration).
//!
//! FPFH descriptors are matched by mutual nearest neighbors, filtered by a
//! tuple test on edge-length ratios, and the pose is found by minimizing
//! `Σ ρ(‖T·s − t‖)` with the scaled Geman-McClure penalty
//! `ρ(r) = μr²/(μ + r²)`. The penalty is handled through its line-process
//! form `Σ l·r² + μ(√l − 1)²`: weights have the closed form
//! `l = (μ/(μ + r²))²`, and the pose is updated by a Gauss-Newton step on
//! the weighted least-squares problem. μ starts large (nearly quadratic
//! objective) and is halved every four iterations until it reaches the
//! squared correspondence-distance scale.

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    compute_fpfh, estimate_normals, voxel_downsample, FpfhSet, NormalOrientation, NormalParams, FPFH_BINS,
};
use crate::geometry::{centroid, Point3, PointCloud, RigidTransform, Vector3};
use crate::linalg::{self, skew};
use crate::metrics::{evaluate_registration, RegistrationReport};
use crate::spatial::KdTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FgrParams {
    /// Voxel size for downsampling before features; 0 disables.
    pub voxel_size: f64,
    pub normal_radius: f64,
    pub feature_radius: f64,
    /// Tuple-test scale τ ∈ (0, 1).
    pub tuple_scale: f64,
    /// Accepted tuples after which the tuple test stops.
    pub max_tuples: usize,
    pub max_iterations: usize,
    /// Initial μ is the squared cloud diameter over this factor.
    pub division_factor: f64,
    /// μ stops decreasing once it is at or below this distance squared.
    pub max_correspondence_distance: f64,
    /// Threshold for the fitness / RMSE in the report.
    pub evaluation_threshold: f64,
    /// Keep only points with z in this range (both clouds, own frames).
    pub z_range: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for FgrParams {
    fn default() -> Self {
        Self::for_voxel(0.2)
    }
}

impl FgrParams {
    /// Defaults scaled to a voxel size: normals at 2 voxels, features at 5.
    pub fn for_voxel(voxel: f64) -> Self {
        Self {
            voxel_size: voxel,
            normal_radius: 2.0 * voxel,
            feature_radius: 5.0 * voxel,
            tuple_scale: 0.9,
            max_tuples: 1000,
            max_iterations: 64,
            division_factor: 1.4,
            max_correspondence_distance: 2.5 * voxel,
            evaluation_threshold: 2.0,
            z_range: None,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.voxel_size >= 0.0) {
            return bad(format!("voxel size must be ≥ 0, got {}", self.voxel_size));
        }
        if !(self.normal_radius > 0.0 && self.feature_radius > 0.0) {
            return bad("normal and feature radii must be positive".into());
        }
        if self.feature_radius < self.normal_radius {
            return bad("feature radius must be at least the normal radius".into());
        }
        if !(self.tuple_scale > 0.0 && self.tuple_scale < 1.0) {
            return bad(format!("tuple scale must be in (0, 1), got {}", self.tuple_scale));
        }
        if !(self.division_factor > 0.0) || !(self.max_correspondence_distance > 0.0) {
            return bad("division factor and correspondence distance must be positive".into());
        }
        if self.max_iterations == 0 || self.max_tuples == 0 {
            return bad("iteration and tuple counts must be positive".into());
        }
        if !(self.evaluation_threshold > 0.0) {
            return bad("evaluation threshold must be positive".into());
        }
        Ok(())
    }
}

/// Scaled Geman-McClure penalty `μr²/(μ + r²)`.
pub fn geman_mcclure(r: f64, mu: f64) -> f64 {
    let r2 = r * r;
    mu * r2 / (mu + r2)
}

/// `dρ/dr = 2μ²r/(μ + r²)²`.
pub fn geman_mcclure_derivative(r: f64, mu: f64) -> f64 {
    let d = mu + r * r;
    2.0 * mu * mu * r / (d * d)
}

/// Optimal line-process weight for residual `r`: `(μ/(μ + r²))²`.
pub fn line_weight(r: f64, mu: f64) -> f64 {
    let s = mu / (mu + r * r);
    s * s
}

/// Black-Rangarajan objective `Σ l·r² + μ(√l − 1)²`.
pub fn joint_objective(squared_residuals: &[f64], weights: &[f64], mu: f64) -> f64 {
    squared_residuals
        .iter()
        .zip(weights)
        .map(|(r2, l)| {
            let s = l.sqrt() - 1.0;
            l * r2 + mu * s * s
        })
        .sum()
}

/// Correspondences as `(source index, target index)`, sorted, unique.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn descriptor_tree(set: &FpfhSet) -> Option<(KdTree<FPFH_BINS>, Vec<usize>)> {
    let ids: Vec<usize> = (0..set.descriptors.len()).filter(|&i| set.valid[i]).collect();
    let pts = ids.iter().map(|&i| set.descriptors[i]).collect();
    KdTree::new(pts).ok().map(|t| (t, ids))
}

/// Mutual nearest neighbors in descriptor space.
pub fn reciprocal_matches(source: &FpfhSet, target: &FpfhSet) -> Vec<(usize, usize)> {
    use rayon::prelude::*;
    let (Some((src_tree, src_ids)), Some((tgt_tree, tgt_ids))) = (descriptor_tree(source), descriptor_tree(target))
    else {
        return Vec::new();
    };
    let src_to_tgt: Vec<usize> = src_ids
        .par_iter()
        .map(|&i| tgt_ids[tgt_tree.nearest(&source.descriptors[i]).0])
        .collect();
    let tgt_to_src: Vec<(usize, usize)> = tgt_ids
        .par_iter()
        .map(|&j| (j, src_ids[src_tree.nearest(&target.descriptors[j]).0]))
        .collect();
    let back: std::collections::HashMap<usize, usize> = tgt_to_src.into_iter().collect();
    src_ids
        .iter()
        .zip(src_to_tgt)
        .filter(|&(&i, j)| back.get(&j) == Some(&i))
        .map(|(&i, j)| (i, j))
        .collect()
}

/// Keeps correspondences that take part in at least one random triplet
/// whose three edge-length ratios `‖sᵢ − sⱼ‖ / ‖tᵢ − tⱼ‖` all lie in
/// `[τ, 1/τ]`. Runs `100·n` trials or until `max_tuples` triplets pass.
pub fn tuple_test(
    source: &[Point3],
    target: &[Point3],
    pairs: &[(usize, usize)],
    tau: f64,
    max_tuples: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let n = pairs.len();
    if n < 3 {
        return Vec::new();
    }
    let mut kept = BTreeSet::new();
    let mut accepted = 0usize;
    for _ in 0..100 * n {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let c = rng.random_range(0..n);
        if a == b || b == c || a == c {
            continue;
        }
        let trip = [pairs[a], pairs[b], pairs[c]];
        let consistent = [(0, 1), (1, 2), (2, 0)].iter().all(|&(x, y)| {
            let ds = (source[trip[x].0] - source[trip[y].0]).norm();
            let dt = (target[trip[x].1] - target[trip[y].1]).norm();
            dt > 0.0 && {
                let ratio = ds / dt;
                ratio >= tau && ratio <= 1.0 / tau
            }
        });
        if consistent {
            kept.extend(trip);
            accepted += 1;
            if accepted >= max_tuples {
                break;
            }
        }
    }
    kept.into_iter().collect()
}

/// Reciprocity test followed by the tuple test.
pub fn match_features(
    source: &PointCloud,
    source_desc: &FpfhSet,
    target: &PointCloud,
    target_desc: &FpfhSet,
    params: &FgrParams,
) -> Result<CorrespondenceSet> {
    if source_desc.descriptors.is_empty() || target_desc.descriptors.is_empty() {
        return Err(Error::EmptyInput("descriptor set"));
    }
    let mutual = reciprocal_matches(source_desc, target_desc);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let pairs = tuple_test(
        source.points(),
        target.points(),
        &mutual,
        params.tuple_scale,
        params.max_tuples,
        &mut rng,
    );
    if pairs.is_empty() {
        return Err(Error::NoCorrespondence);
    }
    Ok(CorrespondenceSet { pairs })
}

/// μ continuation for the line-process optimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuSchedule {
    pub initial: f64,
    /// Lower bound: μ is halved only while above this.
    pub minimum: f64,
    pub max_iterations: usize,
}

/// Bookkeeping for one weight-update + Gauss-Newton alternation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternationStep {
    pub mu: f64,
    /// Joint objective at the incoming pose and weights (current μ).
    pub objective_before: f64,
    /// Joint objective after the weight update and pose step.
    pub objective_after: f64,
    /// Weighted RMS residual after the step.
    pub weighted_rmse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairAlignment {
    pub transform: RigidTransform,
    pub steps: Vec<AlternationStep>,
    pub converged: bool,
}

const STEP_TOLERANCE: f64 = 1e-7;

/// Minimizes the Geman-McClure objective over fixed correspondences.
/// Returns the transform mapping `source` points onto `target` points.
pub fn align_correspondences(
    source: &[Point3],
    target: &[Point3],
    pairs: &[(usize, usize)],
    schedule: &MuSchedule,
) -> Result<PairAlignment> {
    if pairs.is_empty() {
        return Err(Error::NoCorrespondence);
    }
    if !(schedule.initial > 0.0 && schedule.minimum > 0.0) {
        return Err(Error::InvalidParameter("μ schedule must be positive".into()));
    }
    let src: Vec<Point3> = pairs.iter().map(|&(i, _)| source[i]).collect();
    let tgt: Vec<Point3> = pairs.iter().map(|&(_, j)| target[j]).collect();

    let mut transform = RigidTransform::identity();
    let mut weights = vec![1.0; pairs.len()];
    let mut mu = schedule.initial;
    let mut steps = Vec::with_capacity(schedule.max_iterations);
    let mut converged = false;

    let squared_residuals = |t: &RigidTransform| -> Vec<f64> {
        src.iter()
            .zip(&tgt)
            .map(|(s, q)| (t.apply(s) - q).norm_squared())
            .collect()
    };

    for it in 0..schedule.max_iterations {
        if it > 0 && it % 4 == 0 && mu > schedule.minimum {
            mu /= 2.0;
        }
        let r2 = squared_residuals(&transform);
        let before = joint_objective(&r2, &weights, mu);
        for (l, r2) in weights.iter_mut().zip(&r2) {
            *l = line_weight(r2.sqrt(), mu);
        }
        let weighted_obj = |r2: &[f64]| joint_objective(r2, &weights, mu);
        let current = weighted_obj(&r2);

        let moved: Vec<Point3> = src.iter().map(|s| transform.apply(s)).collect();
        let step = gauss_newton_step(&moved, &tgt, &weights);
        let (mut accepted, mut step_norm) = (None, 0.0);
        let mut scale = 1.0;
        for _ in 0..12 {
            let candidate = apply_step(&transform, &step, scale);
            let obj = weighted_obj(&squared_residuals(&candidate));
            if obj <= current {
                step_norm = scale * (step.delta.norm());
                accepted = Some((candidate, obj));
                break;
            }
            scale *= 0.5;
        }
        let after = match accepted {
            Some((t, obj)) => {
                transform = t;
                obj
            }
            None => current,
        };
        let r2 = squared_residuals(&transform);
        let wsum: f64 = weights.iter().sum();
        let wr: f64 = weights.iter().zip(&r2).map(|(l, r)| l * r).sum();
        steps.push(AlternationStep {
            mu,
            objective_before: before,
            objective_after: after,
            weighted_rmse: if wsum > 0.0 { (wr / wsum).sqrt() } else { f64::NAN },
        });
        if mu <= schedule.minimum && step_norm < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(PairAlignment {
        transform,
        steps,
        converged,
    })
}

struct GnStep {
    center: Vector3,
    delta: Vector6<f64>,
}

/// Gauss-Newton step for `Σ lᵢ‖R·xᵢ + v − yᵢ‖²` linearized at the
/// identity, with rotation taken about the weighted centroid of `x`.
fn gauss_newton_step(moved: &[Point3], target: &[Point3], weights: &[f64]) -> GnStep {
    let wsum: f64 = weights.iter().sum();
    let center = if wsum > 0.0 {
        moved
            .iter()
            .zip(weights)
            .fold(Vector3::zeros(), |a, (p, w)| a + p.coords * *w)
            / wsum
    } else {
        centroid(moved).map(|c| c.coords).unwrap_or_else(Vector3::zeros)
    };
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for ((x, y), &w) in moved.iter().zip(target).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let xc = x.coords - center;
        let r = x - y;
        // d(residual)/d(ω, v) = [−[x]×, I]
        let mut j = nalgebra::Matrix3x6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&xc)));
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        jtj += j.transpose() * j * w;
        jtr += j.transpose() * r * w;
    }
    GnStep {
        center,
        delta: linalg::solve_normal_equations(&jtj, &(-jtr)),
    }
}

fn apply_step(t: &RigidTransform, step: &GnStep, scale: f64) -> RigidTransform {
    linalg::centered_update(t, &(step.delta * scale), &step.center)
}

/// Output of [`fgr_register`].
#[derive(Clone, Debug, PartialEq)]
pub struct FgrOutcome {
    pub report: RegistrationReport,
    pub correspondences: CorrespondenceSet,
    pub steps: Vec<AlternationStep>,
}

fn z_filter(cloud: &PointCloud, range: Option<[f64; 2]>) -> PointCloud {
    match range {
        None => cloud.clone(),
        Some([lo, hi]) => {
            let keep: Vec<usize> = (0..cloud.len())
                .filter(|&i| (lo..=hi).contains(&cloud.point(i).z))
                .collect();
            cloud.select(&keep)
        }
    }
}

/// Larger bounding-box diagonal of the two clouds; each lives in its own
/// frame.
fn joint_diameter(a: &PointCloud, b: &PointCloud) -> f64 {
    let single = |c: &PointCloud| {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in c.points() {
            lo = lo.inf(&p.coords);
            hi = hi.sup(&p.coords);
        }
        (hi - lo).norm()
    };
    single(a).max(single(b))
}

pub const MIN_POINTS: usize = 100;

/// Global registration of `source` onto `target`.
pub fn fgr_register(source: &PointCloud, target: &PointCloud, params: &FgrParams) -> Result<FgrOutcome> {
    params.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("registration input cloud"));
    }
    let src = voxel_downsample(&z_filter(source, params.z_range), params.voxel_size)?;
    let tgt = voxel_downsample(&z_filter(target, params.z_range), params.voxel_size)?;
    if src.len() < MIN_POINTS || tgt.len() < MIN_POINTS {
        return Err(Error::InvalidCloud(format!(
            "global registration needs at least {MIN_POINTS} points after downsampling \
             (source {}, target {})",
            src.len(),
            tgt.len()
        )));
    }
    let normal_params = NormalParams {
        radius: params.normal_radius,
        min_neighbors: 3,
        orientation: NormalOrientation::AwayFromCentroid,
    };
    let src_desc = compute_fpfh(&src, &estimate_normals(&src, &normal_params)?, params.feature_radius)?;
    let tgt_desc = compute_fpfh(&tgt, &estimate_normals(&tgt, &normal_params)?, params.feature_radius)?;
    let correspondences = match_features(&src, &src_desc, &tgt, &tgt_desc, params)?;

    let diameter = joint_diameter(&src, &tgt);
    let schedule = MuSchedule {
        initial: diameter * diameter / params.division_factor,
        minimum: params.max_correspondence_distance.powi(2),
        max_iterations: params.max_iterations,
    };
    let aligned = align_correspondences(src.points(), tgt.points(), &correspondences.pairs, &schedule)?;
    let metrics = evaluate_registration(source, target, &aligned.transform, params.evaluation_threshold)?;
    let report = RegistrationReport {
        transform: aligned.transform,
        fitness: metrics.fitness,
        rmse: metrics.rmse,
        inlier_count: metrics.inlier_count,
        iterations: aligned.steps.len(),
        converged: aligned.converged,
        rmse_trace: aligned.steps.iter().map(|s| s.weighted_rmse).collect(),
    };
    Ok(FgrOutcome {
        report,
        correspondences,
        steps: aligned.steps,
    })
}
