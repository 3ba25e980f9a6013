//! Normals, voxel downsampling and FPFH descriptors.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, Point3, PointCloud, Vector3};
use crate::linalg;
use crate::spatial::SpatialIndex;

pub const FPFH_BINS: usize = 33;
const SUB_BINS: usize = 11;

pub type Fpfh = [f64; FPFH_BINS];

/// How the sign of an estimated normal is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalOrientation {
    /// Normals point toward this location.
    Viewpoint(Point3),
    /// Normals point away from the cloud centroid. Commutes with rigid
    /// motions of the cloud.
    AwayFromCentroid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub radius: f64,
    /// Neighbors (excluding the point itself) required for a valid normal.
    pub min_neighbors: usize,
    pub orientation: NormalOrientation,
}

impl NormalParams {
    pub fn with_radius(radius: f64) -> Self {
        Self {
            radius,
            min_neighbors: 3,
            orientation: NormalOrientation::AwayFromCentroid,
        }
    }
}

/// Per-point unit normals; invalid entries are zero and flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalCloud {
    pub normals: Vec<Vector3>,
    pub valid: Vec<bool>,
    /// Neighborhood radius the normals were estimated with.
    pub radius: f64,
}

impl NormalCloud {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Smallest-eigenvector normals of the radius neighborhood covariance.
pub fn estimate_normals(cloud: &PointCloud, params: &NormalParams) -> Result<NormalCloud> {
    if !(params.radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "normal radius must be positive, got {}",
            params.radius
        )));
    }
    if cloud.is_empty() {
        return Ok(NormalCloud {
            normals: Vec::new(),
            valid: Vec::new(),
            radius: params.radius,
        });
    }
    let index = SpatialIndex::new(cloud.points())?;
    Ok(estimate_normals_with_index(cloud, &index, params))
}

pub(crate) fn estimate_normals_with_index(
    cloud: &PointCloud,
    index: &SpatialIndex,
    params: &NormalParams,
) -> NormalCloud {
    let pts = cloud.points();
    let center = centroid(pts).unwrap_or_else(Point3::origin);
    let (normals, valid): (Vec<Vector3>, Vec<bool>) = pts
        .par_iter()
        .map(|p| {
            let nbrs = index.within_radius(p, params.radius);
            if nbrs.len().saturating_sub(1) < params.min_neighbors.max(2) {
                return (Vector3::zeros(), false);
            }
            let local: Vec<Point3> = nbrs.iter().map(|&(j, _)| pts[j]).collect();
            let c = centroid(&local).expect("non-empty neighborhood");
            let cov = linalg::covariance(local.iter(), &c);
            let (mut n, eig) = linalg::smallest_eigenvector(&cov);
            if eig[1] <= 1e-12 * eig[2].max(f64::MIN_POSITIVE) {
                // collinear neighborhood: no defined normal
                return (Vector3::zeros(), false);
            }
            let toward = match params.orientation {
                NormalOrientation::Viewpoint(v) => v - p,
                NormalOrientation::AwayFromCentroid => p - center,
            };
            if n.dot(&toward) < 0.0 {
                n = -n;
            }
            (n, true)
        })
        .unzip();
    NormalCloud {
        normals,
        valid,
        radius: params.radius,
    }
}

/// Replaces all points in each occupied voxel by their centroid. Output
/// is ordered by voxel key; attributes are dropped. A size of zero returns
/// the positions unchanged.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if voxel < 0.0 || !voxel.is_finite() {
        return Err(Error::InvalidParameter(format!("voxel size must be ≥ 0, got {voxel}")));
    }
    if voxel == 0.0 {
        return PointCloud::new(cloud.points().to_vec());
    }
    let mut cells: HashMap<[i64; 3], (Vector3, usize)> = HashMap::new();
    for p in cloud.points() {
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let e = cells.entry(key).or_insert((Vector3::zeros(), 0));
        e.0 += p.coords;
        e.1 += 1;
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by_key(|(k, _)| *k);
    PointCloud::new(
        cells
            .into_iter()
            .map(|(_, (sum, n))| Point3::from(sum / n as f64))
            .collect(),
    )
}

/// FPFH descriptors; points without a usable neighborhood get a zero
/// histogram and `valid = false`.
#[derive(Clone, Debug, PartialEq)]
pub struct FpfhSet {
    pub descriptors: Vec<Fpfh>,
    pub valid: Vec<bool>,
}

/// Angle triplet `(θ, α, φ)` and distance of a point pair in the Darboux
/// frame of whichever endpoint has the normal more aligned with the
/// connecting line. Returns `None` for coincident points or when the
/// connecting line is parallel to the chosen normal.
pub fn pair_features(p1: &Point3, n1: &Vector3, p2: &Point3, n2: &Vector3) -> Option<[f64; 4]> {
    let mut dp = p2 - p1;
    let d = dp.norm();
    if d == 0.0 {
        return None;
    }
    let (mut a, mut b) = (*n1, *n2);
    let angle1 = a.dot(&dp) / d;
    let angle2 = b.dot(&dp) / d;
    let phi;
    if angle1.abs().acos() > angle2.abs().acos() {
        std::mem::swap(&mut a, &mut b);
        dp = -dp;
        phi = -angle2;
    } else {
        phi = angle1;
    }
    let v = dp.cross(&a);
    let vn = v.norm();
    if vn == 0.0 {
        return None;
    }
    let v = v / vn;
    let w = a.cross(&v);
    let alpha = v.dot(&b);
    let theta = w.dot(&b).atan2(a.dot(&b));
    Some([theta, alpha, phi, d])
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let b = ((value - lo) / (hi - lo) * SUB_BINS as f64).floor();
    (b.max(0.0) as usize).min(SUB_BINS - 1)
}

/// Bin indices of a pair-feature triplet inside the 33-bin layout.
pub fn pair_bins(f: &[f64; 4]) -> [usize; 3] {
    [
        bin(f[0], -std::f64::consts::PI, std::f64::consts::PI),
        SUB_BINS + bin(f[1], -1.0, 1.0),
        2 * SUB_BINS + bin(f[2], -1.0, 1.0),
    ]
}

/// Simplified point feature histograms: for each point, the three angle
/// histograms over its radius neighbors, each normalized to sum 100.
pub fn compute_spfh(cloud: &PointCloud, normals: &NormalCloud, radius: f64) -> Result<Vec<Option<Fpfh>>> {
    let index = SpatialIndex::new(cloud.points())?;
    Ok(spfh_with_index(cloud, normals, &index, radius))
}

fn spfh_with_index(cloud: &PointCloud, normals: &NormalCloud, index: &SpatialIndex, radius: f64) -> Vec<Option<Fpfh>> {
    let pts = cloud.points();
    pts.par_iter()
        .enumerate()
        .map(|(i, p)| {
            if !normals.valid[i] {
                return None;
            }
            let feats: Vec<[f64; 4]> = index
                .within_radius(p, radius)
                .into_iter()
                .filter(|&(j, _)| j != i && normals.valid[j])
                .filter_map(|(j, _)| pair_features(p, &normals.normals[i], &pts[j], &normals.normals[j]))
                .collect();
            if feats.is_empty() {
                return None;
            }
            let incr = 100.0 / feats.len() as f64;
            let mut h = [0.0; FPFH_BINS];
            for f in &feats {
                for b in pair_bins(f) {
                    h[b] += incr;
                }
            }
            Some(h)
        })
        .collect()
}

/// Fast point feature histograms: own SPFH plus the inverse squared
/// distance weighted SPFH of the radius neighbors, the neighbor part of
/// each sub-histogram normalized to sum 100.
pub fn compute_fpfh(cloud: &PointCloud, normals: &NormalCloud, radius: f64) -> Result<FpfhSet> {
    if normals.len() != cloud.len() {
        return Err(Error::InvalidParameter(format!(
            "{} normals for {} points",
            normals.len(),
            cloud.len()
        )));
    }
    if !(radius > 0.0) || radius < normals.radius {
        return Err(Error::InvalidParameter(format!(
            "feature radius {radius} must be positive and at least the normal radius {}",
            normals.radius
        )));
    }
    if cloud.is_empty() {
        return Ok(FpfhSet {
            descriptors: Vec::new(),
            valid: Vec::new(),
        });
    }
    let index = SpatialIndex::new(cloud.points())?;
    let spfh = spfh_with_index(cloud, normals, &index, radius);
    let pts = cloud.points();
    let (descriptors, valid) = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let Some(own) = spfh[i] else {
                return ([0.0; FPFH_BINS], false);
            };
            let mut agg = [0.0; FPFH_BINS];
            let mut sums = [0.0; 3];
            for (j, d) in index.within_radius(p, radius) {
                if j == i || d == 0.0 {
                    continue;
                }
                let Some(h) = &spfh[j] else { continue };
                let w = 1.0 / (d * d);
                for (b, v) in h.iter().enumerate() {
                    let val = v * w;
                    agg[b] += val;
                    sums[b / SUB_BINS] += val;
                }
            }
            let mut out = own;
            for b in 0..FPFH_BINS {
                let s = sums[b / SUB_BINS];
                if s != 0.0 {
                    out[b] += agg[b] * 100.0 / s;
                }
            }
            (out, true)
        })
        .unzip();
    Ok(FpfhSet { descriptors, valid })
}
