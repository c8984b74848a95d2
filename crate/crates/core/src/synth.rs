//! Synthetic clouds with exact ground truth: planes, upright cylinders and a
//! three-face box corner. Noise is Gaussian displacement along the analytic
//! surface normal, drawn from a seeded ChaCha stream in generation order.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMask, PointCloud, SurfaceClass};
use crate::error::{Error, Result};

type BoxFace = (Vector3<f64>, Vector3<f64>, Vector3<f64>, usize, usize);

/// Ground-truth crease band half-width, in units of the sampling resolution.
pub const EDGE_BAND_FACTOR: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub labels: LabelMask,
    pub viewpoint: Point3<f64>,
    /// Noise-free surface normal at each point.
    pub analytic_normals: Vec<Vector3<f64>>,
}

impl SyntheticScene {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// Grid in the plane `z = origin.z`, starting at `origin`.
    Plane {
        nx: usize,
        ny: usize,
        resolution: f64,
        #[serde(default)]
        origin: [f64; 3],
    },
    /// Lateral surface of an upright cylinder whose axis passes through `base`.
    Cylinder {
        radius: f64,
        height: f64,
        resolution: f64,
        #[serde(default)]
        base: [f64; 3],
    },
    /// Three mutually orthogonal square faces meeting at `corner`.
    Box {
        edge_length: f64,
        resolution: f64,
        #[serde(default)]
        corner: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(rename = "primitive")]
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::BadSpec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    /// A square plane of side `extent` centered on the origin with upright
    /// cylinders `(x, y, radius)` standing on it.
    pub fn cylinders_on_plane(extent: f64, resolution: f64, cylinders: &[(f64, f64, f64)], height: f64) -> Self {
        let n = (extent / resolution).round() as usize + 1;
        let half = (n - 1) as f64 * resolution / 2.0;
        let mut primitives = vec![Primitive::Plane {
            nx: n,
            ny: n,
            resolution,
            origin: [-half, -half, 0.0],
        }];
        primitives.extend(cylinders.iter().map(|&(x, y, radius)| Primitive::Cylinder {
            radius,
            height,
            resolution,
            base: [x, y, 0.0],
        }));
        Self {
            primitives,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.seed = seed;
        self
    }
}

/// Raw samples before noise: position, analytic normal, label.
struct Samples {
    points: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
    labels: Vec<SurfaceClass>,
}

impl Samples {
    fn new() -> Self {
        Self {
            points: Vec::new(),
            normals: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn push(&mut self, p: Point3<f64>, n: Vector3<f64>, label: SurfaceClass) {
        self.points.push(p);
        self.normals.push(n);
        self.labels.push(label);
    }

    fn append(&mut self, mut other: Samples) {
        self.points.append(&mut other.points);
        self.normals.append(&mut other.normals);
        self.labels.append(&mut other.labels);
    }

    fn finish(mut self, noise_sigma: f64, seed: u64, viewpoint: Point3<f64>) -> Result<SyntheticScene> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::BadSpec(format!("noise_sigma must be >= 0, got {noise_sigma}")));
        }
        if self.points.is_empty() {
            return Err(Error::BadSpec("scene has no points".into()));
        }
        if noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::BadSpec(e.to_string()))?;
            for (p, n) in self.points.iter_mut().zip(&self.normals) {
                *p += n * normal.sample(&mut rng);
            }
        }
        Ok(SyntheticScene {
            cloud: PointCloud::new(self.points).with_sensor_origin(viewpoint),
            labels: LabelMask::new(self.labels),
            viewpoint,
            analytic_normals: self.normals,
        })
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::BadSpec(format!("{name} must be positive, got {v}")))
    }
}

fn plane_samples(nx: usize, ny: usize, res: f64, origin: Point3<f64>) -> Result<Samples> {
    if nx < 2 || ny < 2 {
        return Err(Error::BadSpec(format!(
            "plane needs at least 2x2 samples, got {nx}x{ny}"
        )));
    }
    check_positive("plane resolution", res)?;
    let mut s = Samples::new();
    for i in 0..nx {
        for j in 0..ny {
            s.push(
                origin + Vector3::new(i as f64 * res, j as f64 * res, 0.0),
                Vector3::z(),
                SurfaceClass::Planar,
            );
        }
    }
    Ok(s)
}

fn cylinder_samples(radius: f64, height: f64, res: f64, base: Point3<f64>) -> Result<Samples> {
    check_positive("cylinder radius", radius)?;
    check_positive("cylinder height", height)?;
    check_positive("cylinder resolution", res)?;
    if res >= radius {
        return Err(Error::BadSpec(format!(
            "cylinder resolution {res} must be below its radius {radius}"
        )));
    }
    let around = ((2.0 * PI * radius / res).round() as usize).max(3);
    let rows = ((height / res).round() as usize).max(1);
    let mut s = Samples::new();
    for a in 0..around {
        let theta = 2.0 * PI * a as f64 / around as f64;
        let radial = Vector3::new(theta.cos(), theta.sin(), 0.0);
        for z in 0..rows {
            s.push(
                base + radial * radius + Vector3::z() * (z as f64 * res),
                radial,
                SurfaceClass::Curved,
            );
        }
    }
    Ok(s)
}

fn box_samples(edge_length: f64, res: f64, corner: Point3<f64>) -> Result<Samples> {
    check_positive("box edge length", edge_length)?;
    check_positive("box resolution", res)?;
    if res >= edge_length / 10.0 {
        return Err(Error::BadSpec(format!(
            "box resolution {res} must be below a tenth of the edge length {edge_length}"
        )));
    }
    let n = (edge_length / res).round() as usize + 1;
    let band = EDGE_BAND_FACTOR * res * (1.0 + 1e-9);
    let mut s = Samples::new();
    // Face z = 0 owns both creases in its plane, face y = 0 owns the z-axis
    // crease, face x = 0 owns neither; shared grid points appear once.
    // (in-face axes u and v, outward normal, first a index, first b index)
    let faces: [BoxFace; 3] = [
        (Vector3::x(), Vector3::y(), Vector3::z(), 0, 0),
        (Vector3::x(), Vector3::z(), Vector3::y(), 0, 1),
        (Vector3::y(), Vector3::z(), Vector3::x(), 1, 1),
    ];
    for (u, v, normal, a0, b0) in faces {
        for a in a0..n {
            for b in b0..n {
                let (da, db) = (a as f64 * res, b as f64 * res);
                // distance to the two creases bounding this face
                let label = if da.min(db) <= band {
                    SurfaceClass::Edge
                } else {
                    SurfaceClass::Planar
                };
                s.push(corner + u * da + v * db, normal, label);
            }
        }
    }
    Ok(s)
}

/// `nx × ny` grid in `z = 0` with corner at the origin; viewpoint above.
pub fn gen_plane(nx: usize, ny: usize, res: f64, noise_sigma: f64, seed: u64) -> Result<SyntheticScene> {
    let s = plane_samples(nx, ny, res, Point3::origin())?;
    let (w, h) = ((nx - 1) as f64 * res, (ny - 1) as f64 * res);
    let viewpoint = Point3::new(w / 2.0, h / 2.0, w.max(h).max(res));
    s.finish(noise_sigma, seed, viewpoint)
}

/// Lateral surface of a cylinder with axis `z` through the origin.
pub fn gen_cylinder(radius: f64, height: f64, res: f64, noise_sigma: f64, seed: u64) -> Result<SyntheticScene> {
    let s = cylinder_samples(radius, height, res, Point3::origin())?;
    let viewpoint = Point3::new(4.0 * radius, 0.0, height / 2.0);
    s.finish(noise_sigma, seed, viewpoint)
}

/// Three orthogonal `L × L` faces on `x = 0`, `y = 0`, `z = 0`. Points within
/// two sampling steps of a crease are labeled edge, the rest planar.
pub fn gen_box_scene(edge_length: f64, res: f64, noise_sigma: f64, seed: u64) -> Result<SyntheticScene> {
    let s = box_samples(edge_length, res, Point3::origin())?;
    let viewpoint = Point3::new(edge_length, edge_length, edge_length);
    s.finish(noise_sigma, seed, viewpoint)
}

/// Builds a multi-primitive scene. Plane samples that fall inside the
/// footprint of a cylinder standing on that plane are removed.
pub fn gen_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.primitives.is_empty() {
        return Err(Error::BadSpec("scene has no primitives".into()));
    }
    let footprints: Vec<(Point3<f64>, f64, f64)> = spec
        .primitives
        .iter()
        .filter_map(|p| match *p {
            Primitive::Cylinder {
                radius, height, base, ..
            } => Some((Point3::from(base), radius, height)),
            _ => None,
        })
        .collect();
    let mut all = Samples::new();
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for primitive in &spec.primitives {
        let s = match *primitive {
            Primitive::Plane {
                nx,
                ny,
                resolution,
                origin,
            } => {
                let mut s = plane_samples(nx, ny, resolution, Point3::from(origin))?;
                let keep: Vec<bool> = s
                    .points
                    .iter()
                    .map(|p| {
                        !footprints.iter().any(|(base, r, h)| {
                            let inside = ((p.x - base.x).powi(2) + (p.y - base.y).powi(2)).sqrt() < *r;
                            inside && p.z >= base.z - 1e-12 && p.z <= base.z + h
                        })
                    })
                    .collect();
                retain_by(&mut s, &keep);
                s
            }
            Primitive::Cylinder {
                radius,
                height,
                resolution,
                base,
            } => cylinder_samples(radius, height, resolution, Point3::from(base))?,
            Primitive::Box {
                edge_length,
                resolution,
                corner,
            } => box_samples(edge_length, resolution, Point3::from(corner))?,
        };
        for p in &s.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        all.append(s);
    }
    let center = nalgebra::center(&lo, &hi);
    let diag = (hi - lo).norm().max(1e-3);
    let viewpoint = Point3::new(center.x, center.y, hi.z + diag);
    all.finish(spec.noise_sigma, spec.seed, viewpoint)
}

fn retain_by(s: &mut Samples, keep: &[bool]) {
    let mut it = keep.iter();
    s.points.retain(|_| *it.next().unwrap_or(&true));
    let mut it = keep.iter();
    s.normals.retain(|_| *it.next().unwrap_or(&true));
    let mut it = keep.iter();
    s.labels.retain(|_| *it.next().unwrap_or(&true));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_corners() {
        let s = gen_plane(2, 2, 1.0, 0.0, 0).unwrap();
        let pts: Vec<_> = s.cloud.points().to_vec();
        assert_eq!(
            pts,
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0)
            ]
        );
        assert!(s.labels.labels().iter().all(|&c| c == SurfaceClass::Planar));
        assert!(s.viewpoint.z > 0.0);
    }

    #[test]
    fn noise_free_plane_is_flat_and_noisy_plane_is_seeded() {
        let s = gen_plane(20, 30, 0.001, 0.0, 1).unwrap();
        assert!(s.cloud.points().iter().all(|p| p.z == 0.0));
        let a = gen_plane(20, 30, 0.001, 0.0005, 9).unwrap();
        let b = gen_plane(20, 30, 0.001, 0.0005, 9).unwrap();
        let c = gen_plane(20, 30, 0.001, 0.0005, 10).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert_ne!(a.cloud, c.cloud);
        // displacement only along z
        assert!(a
            .cloud
            .points()
            .iter()
            .zip(s.cloud.points())
            .all(|(p, q)| p.x == q.x && p.y == q.y));
    }

    #[test]
    fn plane_needs_two_by_two() {
        assert!(matches!(gen_plane(1, 5, 1.0, 0.0, 0), Err(Error::BadSpec(_))));
    }

    #[test]
    fn cylinder_sample_count_and_geometry() {
        let s = gen_cylinder(0.05, 0.1, 0.001, 0.0, 0).unwrap();
        // 2π·0.05/0.001 ≈ 314 around, 100 rows
        assert_eq!(s.len(), 314 * 100);
        for (p, n) in s.cloud.points().iter().zip(&s.analytic_normals) {
            let r = (p.x * p.x + p.y * p.y).sqrt();
            assert!((r - 0.05).abs() < 1e-12);
            assert!((n - Vector3::new(p.x, p.y, 0.0) / 0.05).norm() < 1e-9);
        }
        assert!(s.labels.labels().iter().all(|&c| c == SurfaceClass::Curved));
        assert!(gen_cylinder(0.01, 0.1, 0.02, 0.0, 0).is_err());
    }

    #[test]
    fn box_counts_dedup_and_faces() {
        let (l, res) = (0.05, 0.001);
        let s = gen_box_scene(l, res, 0.0, 0).unwrap();
        let n = 51usize;
        assert_eq!(s.len(), 3 * n * n - 3 * n + 1);
        for p in s.cloud.points() {
            let on = [p.x == 0.0, p.y == 0.0, p.z == 0.0];
            assert!(on.iter().any(|&b| b));
        }
        let mut keys: Vec<_> = s
            .cloud
            .points()
            .iter()
            .map(|p| {
                (
                    (p.x / res).round() as i64,
                    (p.y / res).round() as i64,
                    (p.z / res).round() as i64,
                )
            })
            .collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), s.len());
        assert!(gen_box_scene(0.05, 0.01, 0.0, 0).is_err());
    }

    #[test]
    fn box_edge_fraction() {
        // rows at distance 0, 1, 2 steps from each crease: 15n - 26 points
        let (l, res) = (0.1, 0.001);
        let s = gen_box_scene(l, res, 0.0, 0).unwrap();
        let n = 101usize;
        let edges = s.labels.count(SurfaceClass::Edge);
        assert_eq!(edges, 15 * n - 26);
        let frac = edges as f64 / s.len() as f64;
        let band_area = 3.0 * (2.0 * res * l) * 2.0 / (3.0 * l * l);
        assert!(frac > band_area && frac < 1.3 * band_area, "{frac} vs {band_area}");
    }

    #[test]
    fn scene_removes_plane_under_cylinders() {
        let spec = SceneSpec::cylinders_on_plane(0.2, 0.005, &[(0.0, 0.0, 0.03)], 0.05);
        let s = gen_scene(&spec).unwrap();
        for (p, &c) in s.cloud.points().iter().zip(s.labels.labels()) {
            if c == SurfaceClass::Planar {
                assert!((p.x * p.x + p.y * p.y).sqrt() >= 0.03);
            }
        }
        assert!(s.labels.count(SurfaceClass::Curved) > 0);
        assert!(s.viewpoint.z > 0.05);
    }

    #[test]
    fn spec_from_toml() {
        let spec = SceneSpec::from_toml(
            r#"
            seed = 3
            noise_sigma = 0.0005
            [[primitive]]
            type = "plane"
            nx = 10
            ny = 12
            resolution = 0.01
            [[primitive]]
            type = "box"
            edge_length = 0.05
            resolution = 0.001
            corner = [1.0, 0.0, 0.0]
            "#,
        )
        .unwrap();
        assert_eq!(spec.primitives.len(), 2);
        assert_eq!(SceneSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        assert!(matches!(
            SceneSpec::from_toml("[[primitive]]\ntype = \"torus\"\n"),
            Err(Error::BadSpec(_))
        ));
        assert!(matches!(SceneSpec::from_toml("seed = \"x\""), Err(Error::BadSpec(_))));
    }
}
