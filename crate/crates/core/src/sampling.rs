//! Regular-grid sampling of semantic B-Rep surfaces into a labeled cloud.
//!
//! Every surface gets its own in-plane frame. The grid is axis-aligned in
//! that frame, anchored at the minimum of the surface's `(u, v)` bounding
//! box and spaced by the sampling rate. Grid nodes inside the outer ring
//! and outside all holes are emitted with the surface's label and id;
//! nodes on a boundary count as inside.

use std::collections::HashSet;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Plane, Point3, PointCloud, SemanticClass, Vector3};

pub type Vector2d = Vector2<f64>;

/// Maximum distance of any ring vertex from the surface's best-fit plane.
pub const COPLANARITY_TOLERANCE: f64 = 1e-6;

/// Absolute tolerance for "on the boundary" in the polygon test.
const BOUNDARY_EPS: f64 = 1e-9;

/// A planar polygon with holes, carrying its class and object id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticSurface {
    pub label: SemanticClass,
    pub id: String,
    pub outer: Vec<Point3>,
    #[serde(default)]
    pub holes: Vec<Vec<Point3>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildingModel {
    pub surfaces: Vec<SemanticSurface>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// Grid spacing in meters.
    pub rate: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { rate: 0.1 }
    }
}

/// Orthonormal in-plane frame of a surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFrame {
    pub origin: Point3,
    pub u: Vector3,
    pub v: Vector3,
    pub normal: Vector3,
}

impl PlaneFrame {
    /// In-plane coordinates and signed out-of-plane residual of `p`.
    pub fn to_uv(&self, p: &Point3) -> (Vector2d, f64) {
        let d = p - self.origin;
        (Vector2d::new(d.dot(&self.u), d.dot(&self.v)), d.dot(&self.normal))
    }

    pub fn to_world(&self, uv: &Vector2d) -> Point3 {
        self.origin + self.u * uv.x + self.v * uv.y
    }
}

/// Drops a repeated closing vertex.
fn open_ring(ring: &[Point3]) -> &[Point3] {
    match ring {
        [first, .., last] if ring.len() > 1 && first == last => &ring[..ring.len() - 1],
        _ => ring,
    }
}

impl SemanticSurface {
    pub fn new(label: SemanticClass, id: impl Into<String>, outer: Vec<Point3>) -> Self {
        Self {
            label,
            id: id.into(),
            outer,
            holes: Vec::new(),
        }
    }

    pub fn with_hole(mut self, hole: Vec<Point3>) -> Self {
        self.holes.push(hole);
        self
    }

    fn degenerate(&self, reason: impl Into<String>) -> Error {
        Error::DegenerateSurface {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks ring sizes, coplanarity, simplicity of the outer ring and
    /// that every hole lies strictly inside it.
    pub fn validate(&self) -> Result<PlaneFrame> {
        let frame = surface_plane_frame(self)?;
        let outer_uv = project_ring(&frame, open_ring(&self.outer));
        if !ring_is_simple(&outer_uv) {
            return Err(self.degenerate("outer ring self-intersects"));
        }
        for (h, hole) in self.holes.iter().enumerate() {
            let hole = open_ring(hole);
            if hole.len() < 3 {
                return Err(self.degenerate(format!("hole {h} has fewer than 3 vertices")));
            }
            for p in hole {
                let (uv, residual) = frame.to_uv(p);
                if residual.abs() > COPLANARITY_TOLERANCE {
                    return Err(
                        self.degenerate(format!("hole {h} is off the surface plane by {:.3e} m", residual.abs()))
                    );
                }
                if ring_location(&uv, &outer_uv) != Location::Inside {
                    return Err(self.degenerate(format!("hole {h} is not strictly inside the outer ring")));
                }
            }
        }
        Ok(frame)
    }
}

impl BuildingModel {
    pub fn validate(&self) -> Result<()> {
        if self.surfaces.is_empty() {
            return Err(Error::InvalidModel("model has no surfaces".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.surfaces {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidModel(format!("duplicate surface id `{}`", s.id)));
            }
            if s.label == SemanticClass::Unlabeled {
                return Err(Error::InvalidModel(format!("surface `{}` is unlabeled", s.id)));
            }
            s.validate()?;
        }
        Ok(())
    }
}

/// In-plane frame of a surface: normal from the best-fit plane of the outer
/// ring (oriented along the ring's winding), `u` the normalized in-plane
/// projection of the world axis that projects longest (x before y before z
/// on ties), `v = normal × u`.
pub fn surface_plane_frame(surface: &SemanticSurface) -> Result<PlaneFrame> {
    let ring = open_ring(&surface.outer);
    if ring.len() < 3 {
        return Err(surface.degenerate("outer ring has fewer than 3 vertices"));
    }
    let (mut normal, _, centroid) = Plane::fit(ring).ok_or_else(|| surface.degenerate("outer ring is collinear"))?;

    // Newell normal gives the winding orientation
    let mut newell = Vector3::zeros();
    for (i, a) in ring.iter().enumerate() {
        let b = ring[(i + 1) % ring.len()];
        newell += (a - centroid).cross(&(b - centroid));
    }
    let extent = ring.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    if newell.norm() <= 1e-12 * extent * extent {
        return Err(surface.degenerate("outer ring encloses no area"));
    }
    if newell.dot(&normal) < 0.0 {
        normal = -normal;
    }

    for p in ring {
        let r = (p - centroid).dot(&normal).abs();
        if r > COPLANARITY_TOLERANCE {
            return Err(surface.degenerate(format!("vertex off plane by {r:.3e} m")));
        }
    }

    let projections = [Vector3::x(), Vector3::y(), Vector3::z()].map(|a| a - normal * a.dot(&normal));
    let longest = projections.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let u = projections
        .iter()
        .find(|p| p.norm() >= longest - 1e-9)
        .expect("at least one axis projects")
        .normalize();
    let v = normal.cross(&u);
    // origin on the fitted plane, near the first vertex
    let origin = ring[0] - normal * (ring[0] - centroid).dot(&normal);
    Ok(PlaneFrame { origin, u, v, normal })
}

fn project_ring(frame: &PlaneFrame, ring: &[Point3]) -> Vec<Vector2d> {
    ring.iter().map(|p| frame.to_uv(p).0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Location {
    Inside,
    Boundary,
    Outside,
}

fn on_segment(p: &Vector2d, a: &Vector2d, b: &Vector2d) -> bool {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - p).norm() <= BOUNDARY_EPS
}

fn ring_location(p: &Vector2d, ring: &[Vector2d]) -> Location {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let a = &ring[i];
        let b = &ring[(i + 1) % n];
        if on_segment(p, a, b) {
            return Location::Boundary;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    if inside {
        Location::Inside
    } else {
        Location::Outside
    }
}

/// Membership test in the surface's `(u, v)` coordinates: inside (or on)
/// the outer ring and not strictly inside any hole.
pub fn point_in_polygon(uv: &Vector2d, outer: &[Vector2d], holes: &[Vec<Vector2d>]) -> bool {
    if outer.len() < 3 || ring_location(uv, outer) == Location::Outside {
        return false;
    }
    holes
        .iter()
        .all(|h| h.len() < 3 || ring_location(uv, h) != Location::Inside)
}

fn segments_cross(a: &Vector2d, b: &Vector2d, c: &Vector2d, d: &Vector2d) -> bool {
    let orient = |p: &Vector2d, q: &Vector2d, r: &Vector2d| (q - p).perp(&(r - p));
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    on_segment(c, a, b) || on_segment(d, a, b) || on_segment(a, c, d) || on_segment(b, c, d)
}

fn ring_is_simple(ring: &[Vector2d]) -> bool {
    let n = ring.len();
    for i in 0..n {
        for j in i + 1..n {
            // skip edges sharing a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_cross(&ring[i], &ring[(i + 1) % n], &ring[j], &ring[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Grid points of one surface in world coordinates.
pub fn sample_surface(surface: &SemanticSurface, rate: f64) -> Result<Vec<Point3>> {
    let frame = surface_plane_frame(surface)?;
    let outer = project_ring(&frame, open_ring(&surface.outer));
    let holes: Vec<Vec<Vector2d>> = surface
        .holes
        .iter()
        .map(|h| project_ring(&frame, open_ring(h)))
        .collect();
    let (mut lo, mut hi) = (Vector2d::repeat(f64::INFINITY), Vector2d::repeat(f64::NEG_INFINITY));
    for p in &outer {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let steps = |extent: f64| ((extent / rate) + 1e-9).floor() as usize;
    let (nu, nv) = (steps(hi.x - lo.x), steps(hi.y - lo.y));
    let mut out = Vec::new();
    for j in 0..=nv {
        for i in 0..=nu {
            let uv = Vector2d::new(lo.x + i as f64 * rate, lo.y + j as f64 * rate);
            if point_in_polygon(&uv, &outer, &holes) {
                out.push(frame.to_world(&uv));
            }
        }
    }
    Ok(out)
}

/// Samples every surface and concatenates the results in input order.
pub fn sample_model(model: &BuildingModel, params: &SamplingParams) -> Result<PointCloud> {
    if !(params.rate > 0.0 && params.rate.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sampling rate must be positive, got {}",
            params.rate
        )));
    }
    model.validate()?;
    let per_surface = model
        .surfaces
        .par_iter()
        .map(|s| sample_surface(s, params.rate))
        .collect::<Result<Vec<_>>>()?;

    let total: usize = per_surface.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::EmptyOutput);
    }
    let mut points = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut ids = Vec::with_capacity(total);
    for (surface, pts) in model.surfaces.iter().zip(per_surface) {
        labels.extend(std::iter::repeat_n(surface.label, pts.len()));
        ids.extend(std::iter::repeat_n(surface.id.clone(), pts.len()));
        points.extend(pts);
    }
    PointCloud::new(points)?.with_labels(labels)?.with_ids(ids)
}
