//! kD-tree neighbor search over unorganized clouds.
//!
//! Radius queries use the closed ball (`d <= r`, compared on squared
//! distances) and never return the query point itself. The tree is built by
//! median splits on the widest axis; ties on the split coordinate are broken
//! by point id so construction is reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        cloud.ensure_non_empty()?;
        let points = cloud.points().to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        build_node(&points, &mut order, 0, &mut nodes);
        Ok(Self { points, order, nodes })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> Point3<f64> {
        self.points[id]
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.points.len() {
            Err(Error::InvalidId {
                id,
                len: self.points.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Ids of all points within distance `r` of point `id`, excluding `id`.
    pub fn radius_neighbors(&self, id: usize, r: f64) -> Result<Vec<usize>> {
        self.check_id(id)?;
        check_radius(r)?;
        let mut out = Vec::new();
        self.radius_search(&self.points[id], r, Some(id), &mut out);
        Ok(out)
    }

    /// The `k` nearest other points, ascending by distance (ties by id).
    pub fn k_nearest(&self, id: usize, k: usize) -> Result<Vec<usize>> {
        self.check_id(id)?;
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(self
            .knn_search(&self.points[id], k, Some(id))
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    }

    /// Appends to `out` the ids within the closed ball around `query`.
    /// `out` is cleared first. Order is unspecified.
    pub fn radius_search(&self, query: &Point3<f64>, r: f64, exclude: Option<usize>, out: &mut Vec<usize>) {
        out.clear();
        if self.nodes.is_empty() {
            return;
        }
        let r2 = r * r;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match self.nodes[n] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if Some(i) != exclude && (self.points[i] - query).norm_squared() <= r2 {
                            out.push(i);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let q = query[axis];
                    if q - r <= value {
                        stack.push(left);
                    }
                    if q + r >= value {
                        stack.push(right);
                    }
                }
            }
        }
    }

    /// Up to `k` nearest neighbors of `query` as `(id, squared distance)`,
    /// ascending by distance then id.
    pub fn knn_search(&self, query: &Point3<f64>, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.knn_node(0, query, k, exclude, &mut heap);
        }
        let mut found: Vec<Candidate> = heap.into_vec();
        found.sort_unstable();
        found.into_iter().map(|c| (c.id, c.dist2)).collect()
    }

    fn knn_node(
        &self,
        n: usize,
        query: &Point3<f64>,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[n] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Candidate {
                        dist2: (self.points[i] - query).norm_squared(),
                        id: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if heap.peek().is_some_and(|worst| cand < *worst) {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, query, k, exclude, heap);
                let visit_far = heap.len() < k || heap.peek().is_some_and(|worst| diff * diff <= worst.dist2);
                if visit_far {
                    self.knn_node(far, query, k, exclude, heap);
                }
            }
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveRadius(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn build_node(points: &[Point3<f64>], order: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let idx = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return idx;
    }
    let axis = widest_axis(points, order);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[order[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(points, lo, offset, nodes);
    let right = build_node(points, hi, offset + mid, nodes);
    nodes[idx] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    idx
}

fn widest_axis(points: &[Point3<f64>], order: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0)
}

/// O(n) radius query with the same contract as [`KdTree::radius_neighbors`].
/// Returned ids are ascending.
pub fn brute_force_radius(cloud: &PointCloud, id: usize, r: f64) -> Result<Vec<usize>> {
    if id >= cloud.len() {
        return Err(Error::InvalidId { id, len: cloud.len() });
    }
    check_radius(r)?;
    let q = cloud.point(id);
    let r2 = r * r;
    Ok(cloud
        .points()
        .iter()
        .enumerate()
        .filter(|&(i, p)| i != id && (p - q).norm_squared() <= r2)
        .map(|(i, _)| i)
        .collect())
}

/// Full-sort k-nearest oracle, ascending by distance then id.
pub fn brute_force_knn(cloud: &PointCloud, id: usize, k: usize) -> Result<Vec<usize>> {
    if id >= cloud.len() {
        return Err(Error::InvalidId { id, len: cloud.len() });
    }
    let q = cloud.point(id);
    let mut all: Vec<Candidate> = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != id)
        .map(|(i, p)| Candidate {
            dist2: (p - q).norm_squared(),
            id: i,
        })
        .collect();
    all.sort_unstable();
    Ok(all.into_iter().take(k).map(|c| c.id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(matches!(
            KdTree::build(&PointCloud::new(vec![])),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn single_point_has_no_neighbors() {
        let tree = KdTree::build(&PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)])).unwrap();
        assert!(tree.radius_neighbors(0, 10.0).unwrap().is_empty());
        assert!(tree.k_nearest(0, 3).unwrap().is_empty());
    }

    #[test]
    fn grid_interior_has_eight_neighbors() {
        // 1 mm grid: axis neighbors at 1 mm, diagonals at 1.414 mm, next ring at 2 mm.
        let cloud = grid(7, 0.001);
        let tree = KdTree::build(&cloud).unwrap();
        let center = 3 * 7 + 3;
        let mut got = tree.radius_neighbors(center, 0.0015).unwrap();
        got.sort_unstable();
        let expected: Vec<usize> = [(2, 2), (2, 3), (2, 4), (3, 2), (3, 4), (4, 2), (4, 3), (4, 4)]
            .iter()
            .map(|&(i, j)| i * 7 + j)
            .collect();
        assert_eq!(got, expected);
        assert_eq!(brute_force_radius(&cloud, center, 0.0015).unwrap(), expected);
    }

    #[test]
    fn radius_below_spacing_is_empty() {
        let cloud = grid(5, 0.001);
        let tree = KdTree::build(&cloud).unwrap();
        for id in 0..cloud.len() {
            assert!(tree.radius_neighbors(id, 0.0009).unwrap().is_empty());
        }
    }

    #[test]
    fn closed_ball_includes_exact_ties() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(0.0, 0.5, 0.0),
            Point3::new(0.75, 0.0, 0.0),
        ]);
        let tree = KdTree::build(&cloud).unwrap();
        let mut got = tree.radius_neighbors(0, 0.5).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![1, 2]);
        assert_eq!(brute_force_radius(&cloud, 0, 0.5).unwrap(), vec![1, 2]);
    }

    #[test]
    fn collinear_knn_order() {
        let cloud = PointCloud::new((0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        let tree = KdTree::build(&cloud).unwrap();
        assert_eq!(tree.k_nearest(0, 2).unwrap(), vec![1, 2]);
        assert_eq!(tree.k_nearest(0, 4).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn query_errors() {
        let tree = KdTree::build(&grid(3, 1.0)).unwrap();
        assert!(matches!(
            tree.radius_neighbors(9, 1.0),
            Err(Error::InvalidId { id: 9, len: 9 })
        ));
        assert!(matches!(
            tree.radius_neighbors(0, 0.0),
            Err(Error::NonPositiveRadius(_))
        ));
        assert!(matches!(
            tree.radius_neighbors(0, -1.0),
            Err(Error::NonPositiveRadius(_))
        ));
        assert!(matches!(tree.k_nearest(0, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(tree.k_nearest(10, 1), Err(Error::InvalidId { .. })));
    }

    #[test]
    fn duplicate_points_are_neighbors_but_not_self() {
        let cloud = PointCloud::new(vec![Point3::origin(); 20]);
        let tree = KdTree::build(&cloud).unwrap();
        let mut got = tree.radius_neighbors(5, 1e-9).unwrap();
        got.sort_unstable();
        assert_eq!(got.len(), 19);
        assert!(!got.contains(&5));
        assert_eq!(tree.k_nearest(5, 3).unwrap(), vec![0, 1, 2]);
    }
}
