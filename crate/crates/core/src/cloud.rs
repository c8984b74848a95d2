//! Point cloud and per-point label containers.

use std::fmt;

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|n| - 1` for a normal to count as unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// An unorganized set of 3D points with optional per-point normals.
///
/// `valid[i]` is false when point `i` carries no usable normal. Clouds
/// without normals report every point as valid.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    valid: Vec<bool>,
    sensor_origin: Point3<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        let valid = vec![true; points.len()];
        Self {
            points,
            normals: None,
            valid,
            sensor_origin: Point3::origin(),
        }
    }

    /// Attaches normals. Non-finite or non-unit normals are stored but
    /// flagged invalid.
    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                actual: normals.len(),
            });
        }
        self.valid = normals.iter().map(is_unit).collect();
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_sensor_origin(mut self, origin: Point3<f64>) -> Self {
        self.sensor_origin = origin;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn point(&self, id: usize) -> Point3<f64> {
        self.points[id]
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn sensor_origin(&self) -> Point3<f64> {
        self.sensor_origin
    }

    pub fn ensure_non_empty(&self) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }

    /// Applies a rigid motion to points, normals and the sensor origin.
    pub fn transformed(&self, motion: &Isometry3<f64>) -> Self {
        Self {
            points: self.points.iter().map(|p| motion * p).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| motion.rotation * n).collect()),
            valid: self.valid.clone(),
            sensor_origin: motion * self.sensor_origin,
        }
    }

    /// Concatenates clouds, keeping the sensor origin of the first one.
    /// Normals survive only if every part has them.
    pub fn concat(parts: &[PointCloud]) -> Self {
        let mut points = Vec::new();
        let mut valid = Vec::new();
        let keep_normals = !parts.is_empty() && parts.iter().all(|p| p.normals.is_some());
        let mut normals = Vec::new();
        for part in parts {
            points.extend_from_slice(&part.points);
            if keep_normals {
                valid.extend_from_slice(&part.valid);
                normals.extend_from_slice(part.normals.as_deref().unwrap_or_default());
            } else {
                valid.extend(std::iter::repeat_n(true, part.len()));
            }
        }
        Self {
            points,
            normals: keep_normals.then_some(normals),
            valid,
            sensor_origin: parts.first().map_or(Point3::origin(), |p| p.sensor_origin),
        }
    }
}

fn is_unit(n: &Vector3<f64>) -> bool {
    n.iter().all(|c| c.is_finite()) && (n.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
}

/// Ground-truth and predicted surface classes, with their on-disk ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceClass {
    Planar,
    Curved,
    Edge,
    Unlabeled,
}

impl SurfaceClass {
    pub const ALL: [SurfaceClass; 4] = [
        SurfaceClass::Planar,
        SurfaceClass::Curved,
        SurfaceClass::Edge,
        SurfaceClass::Unlabeled,
    ];

    pub fn id(self) -> u8 {
        match self {
            SurfaceClass::Planar => 0,
            SurfaceClass::Curved => 1,
            SurfaceClass::Edge => 2,
            SurfaceClass::Unlabeled => 255,
        }
    }

    pub fn from_id(id: i64) -> Option<Self> {
        match id {
            0 => Some(SurfaceClass::Planar),
            1 => Some(SurfaceClass::Curved),
            2 => Some(SurfaceClass::Edge),
            255 => Some(SurfaceClass::Unlabeled),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SurfaceClass::Planar => "planar",
            SurfaceClass::Curved => "curved",
            SurfaceClass::Edge => "edge",
            SurfaceClass::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for SurfaceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SurfaceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SurfaceClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown class name {s:?}")))
    }
}

/// Per-point class labels, index-aligned with a cloud.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMask {
    labels: Vec<SurfaceClass>,
}

impl LabelMask {
    pub fn new(labels: Vec<SurfaceClass>) -> Self {
        Self { labels }
    }

    pub fn filled(class: SurfaceClass, len: usize) -> Self {
        Self {
            labels: vec![class; len],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[SurfaceClass] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> SurfaceClass {
        self.labels[i]
    }

    pub fn count(&self, class: SurfaceClass) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    /// Checks that the mask can be paired with a cloud of `len` points.
    pub fn ensure_len(&self, len: usize) -> Result<()> {
        if self.labels.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                actual: self.labels.len(),
            });
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &LabelMask) {
        self.labels.extend_from_slice(&other.labels);
    }
}

impl From<Vec<SurfaceClass>> for LabelMask {
    fn from(labels: Vec<SurfaceClass>) -> Self {
        Self { labels }
    }
}

impl FromIterator<SurfaceClass> for LabelMask {
    fn from_iter<I: IntoIterator<Item = SurfaceClass>>(iter: I) -> Self {
        Self {
            labels: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_unit_normals_are_flagged_invalid() {
        let cloud = PointCloud::new(vec![Point3::origin(); 3])
            .with_normals(vec![
                Vector3::z(),
                Vector3::new(0.0, 0.0, 2.0),
                Vector3::new(f64::NAN, 0.0, 0.0),
            ])
            .unwrap();
        assert_eq!(cloud.valid(), &[true, false, false]);
    }

    #[test]
    fn normals_length_must_match() {
        let err = PointCloud::new(vec![Point3::origin(); 2])
            .with_normals(vec![Vector3::z()])
            .unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 2, actual: 1 }));
    }

    #[test]
    fn class_ids_round_trip() {
        for class in SurfaceClass::ALL {
            assert_eq!(SurfaceClass::from_id(class.id() as i64), Some(class));
            assert_eq!(class.name().parse::<SurfaceClass>().unwrap(), class);
        }
        assert_eq!(SurfaceClass::from_id(7), None);
    }
}
