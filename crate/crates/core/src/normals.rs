//! Surface normals from the smallest-eigenvalue eigenvector of the local
//! covariance, oriented toward a viewpoint.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::eigen::{smallest_eigen, SymMat3};
use crate::error::{Error, Result};
use crate::spatial::KdTree;

pub const DEFAULT_MIN_NEIGHBORS: usize = 5;

/// Covariance about the centroid, normalized by the point count.
pub fn covariance(points: &[Point3<f64>]) -> Result<SymMat3> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    Ok(covariance_of(points.iter().copied()))
}

fn covariance_of(points: impl Iterator<Item = Point3<f64>> + Clone) -> SymMat3 {
    let mut n = 0usize;
    let mut sum = Vector3::zeros();
    for p in points.clone() {
        sum += p.coords;
        n += 1;
    }
    let c = sum / n as f64;
    let mut m = SymMat3::default();
    for p in points {
        let d = p.coords - c;
        m.xx += d.x * d.x;
        m.xy += d.x * d.y;
        m.xz += d.x * d.z;
        m.yy += d.y * d.y;
        m.yz += d.y * d.z;
        m.zz += d.z * d.z;
    }
    let inv = 1.0 / n as f64;
    SymMat3::new(m.xx * inv, m.xy * inv, m.xz * inv, m.yy * inv, m.yz * inv, m.zz * inv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub radius: f64,
    pub viewpoint: Point3<f64>,
    pub min_neighbors: usize,
}

impl NormalParams {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            viewpoint: Point3::origin(),
            min_neighbors: DEFAULT_MIN_NEIGHBORS,
        }
    }

    pub fn with_viewpoint(mut self, viewpoint: Point3<f64>) -> Self {
        self.viewpoint = viewpoint;
        self
    }

    pub fn with_min_neighbors(mut self, min_neighbors: usize) -> Self {
        self.min_neighbors = min_neighbors;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::NonPositiveRadius(self.radius));
        }
        if self.min_neighbors < 3 {
            return Err(Error::InvalidParameter(format!(
                "min_neighbors must be at least 3, got {}",
                self.min_neighbors
            )));
        }
        Ok(())
    }
}

/// Per-point unit normals; `None` marks points without a usable estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    normals: Vec<Option<Vector3<f64>>>,
    radius: f64,
    viewpoint: Point3<f64>,
}

impl NormalField {
    pub fn new(normals: Vec<Option<Vector3<f64>>>, radius: f64, viewpoint: Point3<f64>) -> Self {
        Self {
            normals,
            radius,
            viewpoint,
        }
    }

    /// Uses the normals stored in a cloud, e.g. analytic normals from a
    /// generator or normals loaded from file.
    pub fn from_cloud(cloud: &PointCloud) -> Option<Self> {
        let normals = cloud.normals()?;
        Some(Self {
            normals: normals
                .iter()
                .zip(cloud.valid())
                .map(|(n, &ok)| ok.then_some(*n))
                .collect(),
            radius: f64::NAN,
            viewpoint: cloud.sensor_origin(),
        })
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<Vector3<f64>> {
        self.normals[id]
    }

    pub fn as_slice(&self) -> &[Option<Vector3<f64>>] {
        &self.normals
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn viewpoint(&self) -> Point3<f64> {
        self.viewpoint
    }

    pub fn valid_count(&self) -> usize {
        self.normals.iter().filter(|n| n.is_some()).count()
    }

    /// Returns a copy of `cloud` carrying these normals (invalid ones as NaN).
    pub fn attach_to(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let nan = Vector3::repeat(f64::NAN);
        cloud
            .clone()
            .with_normals(self.normals.iter().map(|n| n.unwrap_or(nan)).collect())
    }
}

/// Estimates one normal per point from the covariance of the point and its
/// radius neighbors, flipped so that `dot(viewpoint - p, n) >= 0`.
///
/// Points with fewer than `min_neighbors` neighbors, or whose neighborhood is
/// collinear or collapsed, get no normal.
pub fn estimate_all_normals(cloud: &PointCloud, index: &KdTree, params: &NormalParams) -> Result<NormalField> {
    params.validate()?;
    if index.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: index.len(),
        });
    }
    let points = cloud.points();
    let normals = (0..points.len())
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            index.radius_search(&points[i], params.radius, Some(i), buf);
            if buf.len() < params.min_neighbors {
                return None;
            }
            let cov = covariance_of(std::iter::once(points[i]).chain(buf.iter().map(|&j| points[j])));
            estimate_from_covariance(&cov, &points[i], &params.viewpoint)
        })
        .collect();
    Ok(NormalField::new(normals, params.radius, params.viewpoint))
}

fn estimate_from_covariance(cov: &SymMat3, p: &Point3<f64>, viewpoint: &Point3<f64>) -> Option<Vector3<f64>> {
    if !cov.is_finite() {
        return None;
    }
    let eig = smallest_eigen(cov);
    let [_, mid, top] = eig.values;
    if top <= 0.0 || mid <= 1e-12 * top {
        return None;
    }
    let n = eig.smallest_vector;
    Some(if (viewpoint - p).dot(&n) < 0.0 { -n } else { n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn covariance_of_right_triangle() {
        // centroid (1/3, 1/3, 0); by hand: xx = yy = 2/9, xy = -1/9, z row zero
        let m = covariance(&[
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ])
        .unwrap();
        assert_relative_eq!(m.xx, 2.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(m.yy, 2.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(m.xy, -1.0 / 9.0, epsilon = 1e-15);
        assert_eq!((m.xz, m.yz, m.zz), (0.0, 0.0, 0.0));
    }

    #[test]
    fn covariance_of_identical_points_is_zero() {
        let m = covariance(&[Point3::new(1.0, 2.0, 3.0); 4]).unwrap();
        assert_eq!(m, SymMat3::default());
    }

    #[test]
    fn covariance_on_x_axis_is_rank_one() {
        let pts: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let m = covariance(&pts).unwrap();
        let vals = crate::eigen::eigenvalues(&m);
        assert_relative_eq!(vals[2], 2.0, epsilon = 1e-12);
        assert!(vals[0].abs() < 1e-12 && vals[1].abs() < 1e-12);
    }

    #[test]
    fn covariance_needs_three_points() {
        assert!(matches!(
            covariance(&[Point3::origin(), Point3::origin()]),
            Err(Error::TooFewPoints { needed: 3, got: 2 })
        ));
    }

    fn grid(n: usize) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * 0.001, j as f64 * 0.001, 0.0));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn plane_normals_point_at_viewpoint() {
        let cloud = grid(15);
        let tree = KdTree::build(&cloud).unwrap();
        let params = NormalParams::new(0.003).with_viewpoint(Point3::new(0.0, 0.0, 1.0));
        let field = estimate_all_normals(&cloud, &tree, &params).unwrap();
        assert_eq!(field.valid_count(), cloud.len());
        for n in field.as_slice().iter().flatten() {
            assert!((n - Vector3::z()).norm() < 1e-6);
        }
        let below = NormalParams::new(0.003).with_viewpoint(Point3::new(0.0, 0.0, -1.0));
        let field = estimate_all_normals(&cloud, &tree, &below).unwrap();
        assert!(field.as_slice().iter().flatten().all(|n| n.z < -0.999999));
    }

    #[test]
    fn isolated_point_is_invalid() {
        let mut pts = grid(10).points().to_vec();
        pts.push(Point3::new(1.0, 1.0, 1.0));
        let cloud = PointCloud::new(pts);
        let tree = KdTree::build(&cloud).unwrap();
        let field = estimate_all_normals(&cloud, &tree, &NormalParams::new(0.003)).unwrap();
        assert!(field.get(cloud.len() - 1).is_none());
    }

    #[test]
    fn collinear_neighborhood_is_invalid() {
        let cloud = PointCloud::new((0..20).map(|i| Point3::new(i as f64 * 0.001, 0.0, 0.0)).collect());
        let tree = KdTree::build(&cloud).unwrap();
        let field = estimate_all_normals(&cloud, &tree, &NormalParams::new(0.004)).unwrap();
        assert_eq!(field.valid_count(), 0);
    }

    #[test]
    fn rejects_bad_params() {
        let cloud = grid(3);
        let tree = KdTree::build(&cloud).unwrap();
        assert!(estimate_all_normals(&cloud, &tree, &NormalParams::new(0.0)).is_err());
        assert!(estimate_all_normals(&cloud, &tree, &NormalParams::new(1.0).with_min_neighbors(2)).is_err());
    }
}
