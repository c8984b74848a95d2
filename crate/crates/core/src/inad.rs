//! Inter-normal angle difference (INAD): per point, the mean and population
//! standard deviation of the angles between its normal and its neighbors'
//! normals, after statistical rejection of outlying angles.
//!
//! Angles are folded into [0°, 90°] (`α ← min(α, 180° − α)`) so that the sign
//! of an eigenvector-derived normal does not matter. Consequently `μ ∈ [0, 90]`
//! and `σ ∈ [0, 45]`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::normals::NormalField;
use crate::spatial::KdTree;

pub const DEFAULT_OUTLIER_RATE: f64 = 1.0;
pub const DEFAULT_MAX_PASSES: usize = 50;

/// Below this spread every angle counts as an inlier.
const SIGMA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InadPair {
    pub mu: f64,
    pub sigma: f64,
    pub inlier_count: usize,
}

/// How the outlier test is applied to a point's angle list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Rejection {
    /// One test against the statistics of the full list.
    SinglePass,
    /// Repeat the test on the survivors until nothing more is rejected.
    UntilStable { max_passes: usize },
}

impl Default for Rejection {
    fn default() -> Self {
        Rejection::UntilStable {
            max_passes: DEFAULT_MAX_PASSES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InadParams {
    pub radius: f64,
    pub outlier_rate: f64,
    pub rejection: Rejection,
}

impl InadParams {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            outlier_rate: DEFAULT_OUTLIER_RATE,
            rejection: Rejection::default(),
        }
    }

    pub fn with_outlier_rate(mut self, c: f64) -> Self {
        self.outlier_rate = c;
        self
    }

    pub fn with_rejection(mut self, rejection: Rejection) -> Self {
        self.rejection = rejection;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::NonPositiveRadius(self.radius));
        }
        check_rate(self.outlier_rate)?;
        if let Rejection::UntilStable { max_passes: 0 } = self.rejection {
            return Err(Error::InvalidParameter("max_passes must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_rate(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "outlier rate must be positive, got {c}"
        )))
    }
}

/// Folds an angle in degrees onto the undirected range [0, 90].
pub fn fold_angle(deg: f64) -> f64 {
    deg.min(180.0 - deg)
}

/// Folded angle in degrees between two unit normals.
pub fn normal_angle(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> f64 {
    fold_angle(a.dot(b).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Angles between the normal at `point_id` and each neighbor that has a
/// valid normal. Neighbors without one are skipped.
pub fn inter_normal_angles(normals: &NormalField, point_id: usize, neighbor_ids: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(neighbor_ids.len());
    inter_normal_angles_into(normals, point_id, neighbor_ids, &mut out)?;
    Ok(out)
}

fn inter_normal_angles_into(
    normals: &NormalField,
    point_id: usize,
    neighbor_ids: &[usize],
    out: &mut Vec<f64>,
) -> Result<()> {
    if point_id >= normals.len() {
        return Err(Error::InvalidId {
            id: point_id,
            len: normals.len(),
        });
    }
    let center = normals.get(point_id).ok_or(Error::InvalidCenterNormal(point_id))?;
    out.clear();
    out.extend(
        neighbor_ids
            .iter()
            .filter_map(|&j| normals.as_slice().get(j).copied().flatten())
            .map(|n| normal_angle(&center, &n)),
    );
    Ok(())
}

/// Population mean and standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One pass of the outlier test: keep α with `|α − μ| / σ ≤ c`, where μ and
/// σ are taken over the whole list. The value closest to μ always survives.
pub fn reject_outliers(alphas: &[f64], c: f64) -> Result<Vec<f64>> {
    if alphas.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_rate(c)?;
    let mut out = alphas.to_vec();
    reject_pass(&mut out, c);
    Ok(out)
}

/// Repeats [`reject_outliers`] on the survivors until a pass removes nothing
/// or `max_passes` passes have run.
pub fn reject_outliers_until_stable(alphas: &[f64], c: f64, max_passes: usize) -> Result<Vec<f64>> {
    if alphas.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_rate(c)?;
    let mut out = alphas.to_vec();
    apply_rejection(&mut out, c, Rejection::UntilStable { max_passes });
    Ok(out)
}

fn apply_rejection(values: &mut Vec<f64>, c: f64, rejection: Rejection) {
    match rejection {
        Rejection::SinglePass => {
            reject_pass(values, c);
        }
        Rejection::UntilStable { max_passes } => {
            for _ in 0..max_passes {
                if !reject_pass(values, c) {
                    break;
                }
            }
        }
    }
}

/// Returns true if anything was removed.
fn reject_pass(values: &mut Vec<f64>, c: f64) -> bool {
    let (mu, sigma) = mean_std(values);
    if sigma < SIGMA_FLOOR {
        return false;
    }
    let closest = values
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (*a - mu).abs().total_cmp(&(*b - mu).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let before = values.len();
    let mut i = 0;
    values.retain(|a| {
        let keep = i == closest || (a - mu).abs() / sigma <= c;
        i += 1;
        keep
    });
    values.len() != before
}

/// Mean and population standard deviation of the inlier angles.
pub fn inad_pair(alphas: &[f64]) -> Result<InadPair> {
    if alphas.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (mu, sigma) = mean_std(alphas);
    Ok(InadPair {
        mu: mu.clamp(0.0, 90.0),
        sigma: sigma.min(45.0),
        inlier_count: alphas.len(),
    })
}

/// Full per-point pipeline on a precomputed neighbor list: angles, outlier
/// rejection, statistics. `None` when the center normal is invalid or no
/// neighbor has a valid normal.
pub fn inad_from_neighbors(
    normals: &NormalField,
    point_id: usize,
    neighbor_ids: &[usize],
    outlier_rate: f64,
    rejection: Rejection,
    scratch: &mut Vec<f64>,
) -> Option<InadPair> {
    inter_normal_angles_into(normals, point_id, neighbor_ids, scratch).ok()?;
    if scratch.is_empty() {
        return None;
    }
    apply_rejection(scratch, outlier_rate, rejection);
    inad_pair(scratch).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InadField {
    pairs: Vec<Option<InadPair>>,
    params: InadParams,
}

impl InadField {
    pub fn new(pairs: Vec<Option<InadPair>>, params: InadParams) -> Self {
        Self { pairs, params }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<InadPair> {
        self.pairs[id]
    }

    pub fn pairs(&self) -> &[Option<InadPair>] {
        &self.pairs
    }

    pub fn params(&self) -> &InadParams {
        &self.params
    }

    pub fn radius(&self) -> f64 {
        self.params.radius
    }

    pub fn valid_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_some()).count()
    }

    /// Mean μ over valid points, if any.
    pub fn mean_mu(&self) -> Option<f64> {
        let (sum, n) = self
            .pairs
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), p| (s + p.mu, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// CSV with header `point_id,mu,sigma,valid`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("point_id,mu,sigma,valid\n");
        for (i, p) in self.pairs.iter().enumerate() {
            match p {
                Some(p) => {
                    let _ = writeln!(out, "{i},{:.9},{:.9},1", p.mu, p.sigma);
                }
                None => {
                    let _ = writeln!(out, "{i},,,0");
                }
            }
        }
        out
    }
}

/// INAD at every point using radius neighbors at `params.radius`.
pub fn compute_inad_field(
    cloud: &PointCloud,
    normals: &NormalField,
    index: &KdTree,
    params: &InadParams,
) -> Result<InadField> {
    params.validate()?;
    if normals.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: normals.len(),
        });
    }
    if index.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: index.len(),
        });
    }
    let points = cloud.points();
    let pairs = (0..cloud.len())
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(neighbors, scratch), i| {
                normals.get(i)?;
                index.radius_search(&points[i], params.radius, Some(i), neighbors);
                inad_from_neighbors(normals, i, neighbors, params.outlier_rate, params.rejection, scratch)
            },
        )
        .collect();
    Ok(InadField::new(pairs, *params))
}
