//! Static k-d tree for exact nearest-neighbor and radius queries.
//!
//! Results are exact and deterministic: among equidistant candidates the
//! lowest point index wins, so every query returns the same answer as a
//! linear scan in index order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { dim: u8, value: f64, left: u32, right: u32 },
}

/// k-d tree over `D`-dimensional points.
#[derive(Clone, Debug)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn squared_distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("spatial index over an empty point set"));
        }
        assert!(points.len() < u32::MAX as usize, "too many points for the index");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = KdTree {
            points,
            order: Vec::new(),
            nodes: Vec::new(),
        };
        let n = order.len();
        tree.build(&mut order, 0, n);
        tree.order = order;
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64; D] {
        &self.points[i]
    }

    fn build(&mut self, order: &mut [u32], start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let slice = &mut order[start..end];
        let mut lo = [f64::INFINITY; D];
        let mut hi = [f64::NEG_INFINITY; D];
        for &i in slice.iter() {
            let p = &self.points[i as usize];
            for k in 0..D {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let dim = (0..D)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[dim] - lo[dim] == 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let mid = slice.len() / 2;
        let points = &self.points;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][dim]
                .total_cmp(&points[b as usize][dim])
                .then(a.cmp(&b))
        });
        let value = points[slice[mid] as usize][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(order, start, start + mid);
        let right = self.build(order, start + mid, end);
        self.nodes[id as usize] = Node::Split {
            dim: dim as u8,
            value,
            left,
            right,
        };
        id
    }

    /// Nearest point to `query`: `(index, squared distance)`.
    pub fn nearest(&self, query: &[f64; D]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, query, &mut best);
        best
    }

    fn nearest_in(&self, node: u32, q: &[f64; D], best: &mut (usize, f64)) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let i = i as usize;
                    let d2 = squared_distance(q, &self.points[i]);
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                // `<=` so that equidistant points with lower indices are seen
                if diff * diff <= best.1 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// All points within `radius` (inclusive) of `query` as
    /// `(index, squared distance)`, sorted by index.
    pub fn within_radius(&self, query: &[f64; D], radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if radius >= 0.0 {
            self.radius_in(0, query, radius * radius, &mut out);
        }
        out.sort_unstable_by_key(|&(i, _)| i);
        out
    }

    fn radius_in(&self, node: u32, q: &[f64; D], r2: f64, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let d2 = squared_distance(q, &self.points[i as usize]);
                    if d2 <= r2 {
                        out.push((i as usize, d2));
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_in(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_in(far, q, r2, out);
                }
            }
        }
    }
}

/// Nearest-neighbor index over the positions of a point cloud.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    tree: KdTree<3>,
}

impl SpatialIndex {
    pub fn new(points: &[Point3]) -> Result<Self> {
        let pts = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Ok(Self {
            tree: KdTree::new(pts)?,
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// `(index, distance)` of the point closest to `query`; ties go to the
    /// lowest index.
    pub fn nearest(&self, query: &Point3) -> (usize, f64) {
        let (i, d2) = self.tree.nearest(&[query.x, query.y, query.z]);
        (i, d2.sqrt())
    }

    /// Nearest neighbors of many queries, computed in parallel.
    pub fn nearest_many(&self, queries: &[Point3]) -> Vec<(usize, f64)> {
        queries.par_iter().map(|q| self.nearest(q)).collect()
    }

    /// `(index, distance)` of all points within `radius`, sorted by index.
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<(usize, f64)> {
        self.tree
            .within_radius(&[query.x, query.y, query.z], radius)
            .into_iter()
            .map(|(i, d2)| (i, d2.sqrt()))
            .collect()
    }
}

/// Free-function form of [`SpatialIndex::nearest`].
pub fn nearest_neighbor(index: &SpatialIndex, query: &Point3) -> (usize, f64) {
    index.nearest(query)
}
