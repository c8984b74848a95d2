//! Minimal RANSAC plane and cylinder fitting, used as the consensus-based
//! comparison for multi-instance extraction.

use nalgebra::{Point3, Unit, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMask, PointCloud, SurfaceClass};
use crate::error::{Error, Result};
use crate::normals::NormalField;

/// Two normals closer to parallel than this (|n1 × n2|) define no axis.
const PARALLEL_NORMALS: f64 = 1e-6;
/// Three points spanning less than this area (|ab × ac|) define no plane.
const COLLINEAR_POINTS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Plane,
    Cylinder,
}

impl ModelKind {
    pub fn minimal_sample(self) -> usize {
        match self {
            ModelKind::Plane => 3,
            ModelKind::Cylinder => 2,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(ModelKind::Plane),
            "cylinder" => Ok(ModelKind::Cylinder),
            other => Err(Error::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RansacConfig {
    pub model: ModelKind,
    /// Maximum point-to-surface distance of an inlier, meters.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
    /// Accepted cylinder radii `[min, max]`, meters. Without a bound, very
    /// large cylinders tangent to a plane collect the plane as inliers.
    #[serde(default)]
    pub radius_limits: Option<[f64; 2]>,
}

impl RansacConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            inlier_threshold: 0.002,
            max_iterations: 1000,
            min_inliers: 50,
            seed: 0,
            radius_limits: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "inlier threshold must be positive, got {}",
                self.inlier_threshold
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        if let Some([lo, hi]) = self.radius_limits {
            if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!("invalid radius limits [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Model {
    /// Points `p` with `normal · p + offset = 0`.
    Plane { normal: Vector3<f64>, offset: f64 },
    /// Points at distance `radius` from the line through `point` along `axis`.
    Cylinder {
        point: Point3<f64>,
        axis: Vector3<f64>,
        radius: f64,
    },
}

impl Model {
    /// Unsigned distance from `p` to the model surface.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        match *self {
            Model::Plane { normal, offset } => (normal.dot(&p.coords) + offset).abs(),
            Model::Cylinder { point, axis, radius } => {
                let d = p - point;
                (d - axis * d.dot(&axis)).norm().sub_abs(radius)
            }
        }
    }

    pub fn plane_from_points(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<Self> {
        let n = (b - a).cross(&(c - a));
        let scale = (b - a).norm() * (c - a).norm();
        // written so that a NaN norm is also rejected
        if n.norm().partial_cmp(&COLLINEAR_POINTS.max(1e-9 * scale)) != Some(std::cmp::Ordering::Greater) {
            return None;
        }
        let normal = n.normalize();
        Some(Model::Plane {
            normal,
            offset: -normal.dot(&a.coords),
        })
    }

    /// Axis along `n1 × n2`, through the closest approach of the two normal
    /// lines; radius is the mean distance of the two points to that axis.
    pub fn cylinder_from_oriented_points(
        p1: &Point3<f64>,
        n1: &Vector3<f64>,
        p2: &Point3<f64>,
        n2: &Vector3<f64>,
    ) -> Option<Self> {
        let cross = n1.cross(n2);
        if cross.norm() < PARALLEL_NORMALS {
            return None;
        }
        let axis = Unit::new_normalize(cross).into_inner();
        // closest points of p1 + t n1 and p2 + s n2
        let w = p1 - p2;
        let (a, b, c) = (n1.dot(n1), n1.dot(n2), n2.dot(n2));
        let (d, e) = (n1.dot(&w), n2.dot(&w));
        let den = a * c - b * b;
        if den.abs() < f64::EPSILON {
            return None;
        }
        let t = (b * e - c * d) / den;
        let s = (a * e - b * d) / den;
        let point = nalgebra::center(&(p1 + n1 * t), &(p2 + n2 * s));
        let radial = |p: &Point3<f64>| {
            let d = p - point;
            (d - axis * d.dot(&axis)).norm()
        };
        let radius = (radial(p1) + radial(p2)) / 2.0;
        (radius.is_finite() && radius > 0.0).then_some(Model::Cylinder { point, axis, radius })
    }
}

trait SubAbs {
    fn sub_abs(self, other: f64) -> f64;
}

impl SubAbs for f64 {
    fn sub_abs(self, other: f64) -> f64 {
        (self - other).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub model: Model,
    /// Ascending point ids.
    pub inliers: Vec<usize>,
}

fn check_normals(cloud: &PointCloud, normals: Option<&NormalField>, model: ModelKind) -> Result<()> {
    match (model, normals) {
        (ModelKind::Cylinder, None) => Err(Error::InvalidParameter("cylinder fitting requires normals".into())),
        (_, Some(n)) if n.len() != cloud.len() => Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: n.len(),
        }),
        _ => Ok(()),
    }
}

/// Best model by inlier count over `max_iterations` random minimal samples.
/// Candidates are generated sequentially from the seed and scored in
/// parallel; ties go to the earliest candidate.
pub fn ransac_fit(cloud: &PointCloud, normals: Option<&NormalField>, config: &RansacConfig) -> Result<Fit> {
    config.validate()?;
    check_normals(cloud, normals, config.model)?;
    let active: Vec<usize> = (0..cloud.len()).collect();
    fit_subset(cloud, normals, &active, config, config.seed)
}

fn fit_subset(
    cloud: &PointCloud,
    normals: Option<&NormalField>,
    active: &[usize],
    config: &RansacConfig,
    seed: u64,
) -> Result<Fit> {
    let needed = config.model.minimal_sample();
    if active.len() < needed {
        return Err(Error::InsufficientPoints {
            needed,
            got: active.len(),
        });
    }
    let points = cloud.points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<Option<Model>> = (0..config.max_iterations)
        .map(|_| {
            let ids: Vec<usize> = sample(&mut rng, active.len(), needed)
                .into_iter()
                .map(|j| active[j])
                .collect();
            match config.model {
                ModelKind::Plane => Model::plane_from_points(&points[ids[0]], &points[ids[1]], &points[ids[2]]),
                ModelKind::Cylinder => {
                    let n = normals.expect("checked by caller");
                    let (n1, n2) = (n.get(ids[0])?, n.get(ids[1])?);
                    let m = Model::cylinder_from_oriented_points(&points[ids[0]], &n1, &points[ids[1]], &n2)?;
                    match (m, config.radius_limits) {
                        (Model::Cylinder { radius, .. }, Some([lo, hi])) if radius < lo || radius > hi => None,
                        _ => Some(m),
                    }
                }
            }
        })
        .collect();
    let threshold = config.inlier_threshold;
    let best = candidates
        .par_iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let m = m.as_ref()?;
            let count = active.iter().filter(|&&j| m.distance(&points[j]) <= threshold).count();
            Some((count, i))
        })
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let (count, index) = best.unwrap_or((0, usize::MAX));
    if count < config.min_inliers.max(1) {
        return Err(Error::NoModelFound {
            best: count,
            required: config.min_inliers.max(1),
        });
    }
    let model = candidates[index].expect("scored candidates exist");
    let inliers = active
        .iter()
        .copied()
        .filter(|&j| model.distance(&points[j]) <= threshold)
        .collect();
    Ok(Fit { model, inliers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub instances: Vec<Fit>,
    /// True when a round found no model before `n_instances` were extracted.
    pub exhausted: bool,
}

impl Extraction {
    /// Marks the union of all instance inliers as `positive`, every other
    /// point as `negative`.
    pub fn to_mask(&self, len: usize, positive: SurfaceClass, negative: SurfaceClass) -> LabelMask {
        let mut labels = vec![negative; len];
        for fit in &self.instances {
            for &i in &fit.inliers {
                labels[i] = positive;
            }
        }
        LabelMask::new(labels)
    }
}

/// Repeated fitting with inlier removal between rounds. Round `i` uses seed
/// `config.seed + i`. Stops early, with `exhausted` set, once no model with
/// enough inliers remains.
pub fn extract_instances(
    cloud: &PointCloud,
    normals: Option<&NormalField>,
    config: &RansacConfig,
    n_instances: usize,
) -> Result<Extraction> {
    if n_instances == 0 {
        return Err(Error::InvalidParameter("n_instances must be at least 1".into()));
    }
    config.validate()?;
    check_normals(cloud, normals, config.model)?;
    let mut active: Vec<usize> = (0..cloud.len()).collect();
    let mut instances = Vec::new();
    for round in 0..n_instances {
        match fit_subset(cloud, normals, &active, config, config.seed.wrapping_add(round as u64)) {
            Ok(fit) => {
                let mut taken = vec![false; cloud.len()];
                fit.inliers.iter().for_each(|&i| taken[i] = true);
                active.retain(|&i| !taken[i]);
                instances.push(fit);
            }
            Err(Error::NoModelFound { .. } | Error::InsufficientPoints { .. }) if round > 0 => {
                return Ok(Extraction {
                    instances,
                    exhausted: true,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Extraction {
        instances,
        exhausted: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn plane_from_three_points() {
        let m = Model::plane_from_points(
            &Point3::new(0.0, 0.0, 1.0),
            &Point3::new(1.0, 0.0, 1.0),
            &Point3::new(0.0, 1.0, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(m.distance(&Point3::new(5.0, -3.0, 1.0)), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.distance(&Point3::new(0.0, 0.0, 3.0)), 2.0, epsilon = 1e-12);
        assert!(Model::plane_from_points(
            &Point3::origin(),
            &Point3::new(1.0, 0.0, 0.0),
            &Point3::new(2.0, 0.0, 0.0)
        )
        .is_none());
    }

    #[test]
    fn cylinder_from_two_oriented_points() {
        let r = 0.05;
        let p1 = Point3::new(r, 0.0, 0.01);
        let n1 = Vector3::x();
        let p2 = Point3::new(0.0, r, 0.07);
        let n2 = Vector3::y();
        let m = Model::cylinder_from_oriented_points(&p1, &n1, &p2, &n2).unwrap();
        match m {
            Model::Cylinder { axis, radius, .. } => {
                assert_abs_diff_eq!(radius, r, epsilon = 1e-12);
                assert_abs_diff_eq!(axis.z.abs(), 1.0, epsilon = 1e-12);
            }
            _ => unreachable!(),
        }
        let q = Point3::new(-r / 2f64.sqrt(), -r / 2f64.sqrt(), 0.4);
        assert_abs_diff_eq!(m.distance(&q), 0.0, epsilon = 1e-12);
        assert!(Model::cylinder_from_oriented_points(&p1, &n1, &p2, &n1).is_none());
    }

    #[test]
    fn config_checks() {
        let mut c = RansacConfig::new(ModelKind::Plane);
        c.inlier_threshold = 0.0;
        assert!(c.validate().is_err());
        let cloud = PointCloud::new(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]);
        assert!(matches!(
            ransac_fit(&cloud, None, &RansacConfig::new(ModelKind::Plane)),
            Err(Error::InsufficientPoints { needed: 3, got: 2 })
        ));
        assert!(ransac_fit(&cloud, None, &RansacConfig::new(ModelKind::Cylinder)).is_err());
        assert!(extract_instances(&cloud, None, &RansacConfig::new(ModelKind::Plane), 0).is_err());
    }
}
