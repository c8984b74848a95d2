//! Downstream decisions on top of back-projected planar likelihoods: binary
//! planar/curved classification at a large radius and crease detection at a
//! small radius. In both cases the non-planar likelihood is defined as the
//! complement `1 − planar score`, so the two always sum to one.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMask, PointCloud, SurfaceClass};
use crate::error::{Error, Result};
use crate::histogram::{back_project, build_histogram, BinLayout, LikelihoodField, ShapeHistogram};
use crate::inad::{compute_inad_field, InadField, InadParams, Rejection, DEFAULT_OUTLIER_RATE};
use crate::normals::{estimate_all_normals, NormalField, NormalParams, DEFAULT_MIN_NEIGHBORS};
use crate::spatial::KdTree;
use crate::synth::gen_plane;

pub const DEFAULT_R_CLASSIFY: f64 = 0.03;
pub const DEFAULT_R_EDGE: f64 = 0.006;
/// Normal-estimation radius as a fraction of the INAD radius.
pub const DEFAULT_NORMAL_RADIUS_RATIO: f64 = 2.0 / 3.0;
pub const DEFAULT_TAU: f64 = 0.5;

/// Every parameter that influences classification or edge detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub r_classify: f64,
    pub r_edge: f64,
    pub normal_radius_classify: f64,
    pub normal_radius_edge: f64,
    pub outlier_rate: f64,
    pub rejection: Rejection,
    pub k_mu: usize,
    pub k_sigma: usize,
    pub tau: f64,
    pub min_neighbors: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            r_classify: DEFAULT_R_CLASSIFY,
            r_edge: DEFAULT_R_EDGE,
            normal_radius_classify: DEFAULT_R_CLASSIFY * DEFAULT_NORMAL_RADIUS_RATIO,
            normal_radius_edge: DEFAULT_R_EDGE * DEFAULT_NORMAL_RADIUS_RATIO,
            outlier_rate: DEFAULT_OUTLIER_RATE,
            rejection: Rejection::default(),
            k_mu: crate::histogram::DEFAULT_BINS,
            k_sigma: crate::histogram::DEFAULT_BINS,
            tau: DEFAULT_TAU,
            min_neighbors: DEFAULT_MIN_NEIGHBORS,
        }
    }
}

impl TaskConfig {
    pub fn with_bins(mut self, k_mu: usize, k_sigma: usize) -> Self {
        self.k_mu = k_mu;
        self.k_sigma = k_sigma;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_classify", self.r_classify),
            ("r_edge", self.r_edge),
            ("normal_radius_classify", self.normal_radius_classify),
            ("normal_radius_edge", self.normal_radius_edge),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.r_edge >= self.r_classify {
            return Err(Error::InvalidParameter(format!(
                "r_edge ({}) must be smaller than r_classify ({})",
                self.r_edge, self.r_classify
            )));
        }
        check_tau(self.tau)?;
        self.layout().validate()
    }

    pub fn layout(&self) -> BinLayout {
        BinLayout::new(self.k_mu, self.k_sigma)
    }

    pub fn classify_inad(&self) -> InadParams {
        InadParams::new(self.r_classify)
            .with_outlier_rate(self.outlier_rate)
            .with_rejection(self.rejection)
    }

    pub fn edge_inad(&self) -> InadParams {
        InadParams::new(self.r_edge)
            .with_outlier_rate(self.outlier_rate)
            .with_rejection(self.rejection)
    }

    pub fn classify_normals(&self, viewpoint: nalgebra::Point3<f64>) -> NormalParams {
        NormalParams::new(self.normal_radius_classify)
            .with_viewpoint(viewpoint)
            .with_min_neighbors(self.min_neighbors)
    }

    pub fn edge_normals(&self, viewpoint: nalgebra::Point3<f64>) -> NormalParams {
        NormalParams::new(self.normal_radius_edge)
            .with_viewpoint(viewpoint)
            .with_min_neighbors(self.min_neighbors)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "tau must lie strictly between 0 and 1, got {tau}"
        )))
    }
}

/// Normals and INAD pairs of one cloud at one scale.
#[derive(Debug, Clone)]
pub struct ShapeAnalysis {
    pub normals: NormalField,
    pub inad: InadField,
}

/// Estimates normals and the INAD field of `cloud`.
pub fn analyze(
    cloud: &PointCloud,
    index: &KdTree,
    normal_params: &NormalParams,
    inad_params: &InadParams,
) -> Result<ShapeAnalysis> {
    let normals = estimate_all_normals(cloud, index, normal_params)?;
    let inad = compute_inad_field(cloud, &normals, index, inad_params)?;
    debug!(
        "analyzed {} points: {} valid normals, {} valid INAD pairs",
        cloud.len(),
        normals.valid_count(),
        inad.valid_count()
    );
    Ok(ShapeAnalysis { normals, inad })
}

/// Shape histogram of a sample surface.
pub fn sample_histogram(
    sample: &PointCloud,
    normal_params: &NormalParams,
    inad_params: &InadParams,
    layout: BinLayout,
) -> Result<ShapeHistogram> {
    let index = KdTree::build(sample)?;
    let analysis = analyze(sample, &index, normal_params, inad_params)?;
    build_histogram(&analysis.inad, layout)
}

/// Shape histogram of a synthetic square plane with `side` samples per axis
/// at spacing `res`, matching the sampling and noise of the test data.
#[allow(clippy::too_many_arguments)]
pub fn reference_plane_histogram(
    side: usize,
    res: f64,
    noise_sigma: f64,
    seed: u64,
    normal_radius: f64,
    inad_params: &InadParams,
    layout: BinLayout,
    min_neighbors: usize,
) -> Result<ShapeHistogram> {
    let plane = gen_plane(side, side, res, noise_sigma, seed)?;
    let normal_params = NormalParams::new(normal_radius)
        .with_viewpoint(plane.viewpoint)
        .with_min_neighbors(min_neighbors);
    sample_histogram(&plane.cloud, &normal_params, inad_params, layout)
}

/// Labels `planar` where the planar score is at least `tau`, `curved`
/// elsewhere, `unlabeled` where the score is invalid.
pub fn classify_binary(planar: &LikelihoodField, tau: f64) -> Result<LabelMask> {
    check_tau(tau)?;
    Ok(threshold(planar, tau, SurfaceClass::Curved))
}

/// Labels `edge` where `1 − planar score` is at least `tau`, `planar`
/// elsewhere, `unlabeled` where the score is invalid.
pub fn label_edges(planar: &LikelihoodField, tau: f64) -> Result<LabelMask> {
    check_tau(tau)?;
    let edge = planar.complement();
    Ok(edge
        .scores()
        .par_iter()
        .map(|s| match s {
            Some(e) if *e >= tau => SurfaceClass::Edge,
            Some(_) => SurfaceClass::Planar,
            None => SurfaceClass::Unlabeled,
        })
        .collect::<Vec<_>>()
        .into())
}

fn threshold(planar: &LikelihoodField, tau: f64, other: SurfaceClass) -> LabelMask {
    planar
        .scores()
        .par_iter()
        .map(|s| match s {
            Some(p) if *p >= tau => SurfaceClass::Planar,
            Some(_) => other,
            None => SurfaceClass::Unlabeled,
        })
        .collect::<Vec<_>>()
        .into()
}

/// Labels plus both complementary likelihoods.
#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub labels: LabelMask,
    pub planar: LikelihoodField,
    /// `1 − planar` at every valid point (curved or edge likelihood).
    pub complement: LikelihoodField,
    pub analysis: ShapeAnalysis,
}

/// Planar/curved classification of `cloud` at `config.r_classify` against a
/// planar sample histogram. Normals are oriented toward the cloud's sensor
/// origin.
pub fn classify(cloud: &PointCloud, plane_hist: &ShapeHistogram, config: &TaskConfig) -> Result<TaskOutput> {
    config.validate()?;
    let index = KdTree::build(cloud)?;
    let analysis = analyze(
        cloud,
        &index,
        &config.classify_normals(cloud.sensor_origin()),
        &config.classify_inad(),
    )?;
    let planar = back_project(plane_hist, &analysis.inad);
    let labels = classify_binary(&planar, config.tau)?;
    Ok(TaskOutput {
        labels,
        complement: planar.complement(),
        planar,
        analysis,
    })
}

/// Crease detection at `config.r_edge` against a planar sample histogram
/// built at the same radius.
pub fn detect_edges(cloud: &PointCloud, plane_hist: &ShapeHistogram, config: &TaskConfig) -> Result<TaskOutput> {
    config.validate()?;
    let index = KdTree::build(cloud)?;
    let analysis = analyze(
        cloud,
        &index,
        &config.edge_normals(cloud.sensor_origin()),
        &config.edge_inad(),
    )?;
    let planar = back_project(plane_hist, &analysis.inad);
    let labels = label_edges(&planar, config.tau)?;
    Ok(TaskOutput {
        labels,
        complement: planar.complement(),
        planar,
        analysis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(scores: &[Option<f64>]) -> LikelihoodField {
        LikelihoodField::new(scores.to_vec(), 0.03)
    }

    #[test]
    fn all_ones_planar_all_zeros_curved() {
        let ones = classify_binary(&field(&[Some(1.0); 5]), 0.5).unwrap();
        assert_eq!(ones.count(SurfaceClass::Planar), 5);
        let zeros = classify_binary(&field(&[Some(0.0); 5]), 0.5).unwrap();
        assert_eq!(zeros.count(SurfaceClass::Curved), 5);
    }

    #[test]
    fn invalid_points_are_unlabeled_and_tau_is_inclusive() {
        let f = field(&[Some(0.5), None, Some(0.49)]);
        let m = classify_binary(&f, 0.5).unwrap();
        assert_eq!(
            m.labels(),
            &[SurfaceClass::Planar, SurfaceClass::Unlabeled, SurfaceClass::Curved]
        );
        let e = label_edges(&field(&[Some(0.5), Some(0.51), None]), 0.5).unwrap();
        assert_eq!(
            e.labels(),
            &[SurfaceClass::Edge, SurfaceClass::Planar, SurfaceClass::Unlabeled]
        );
    }

    #[test]
    fn tau_bounds() {
        let f = field(&[Some(0.3)]);
        assert!(classify_binary(&f, 0.0).is_err());
        assert!(classify_binary(&f, 1.0).is_err());
        assert!(label_edges(&f, f64::NAN).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TaskConfig::default().validate().is_ok());
        let c = TaskConfig {
            r_edge: 0.05,
            ..TaskConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(TaskConfig::default().with_tau(1.2).validate().is_err());
        assert!(TaskConfig::default().with_bins(0, 10).validate().is_err());
    }

    #[test]
    fn noise_free_plane_has_no_edges() {
        let config = TaskConfig::default();
        let plane = gen_plane(40, 40, 0.001, 0.0, 0).unwrap();
        let hist = reference_plane_histogram(
            40,
            0.001,
            0.0,
            1,
            config.normal_radius_edge,
            &config.edge_inad(),
            config.layout(),
            config.min_neighbors,
        )
        .unwrap();
        let out = detect_edges(&plane.cloud, &hist, &config).unwrap();
        assert_eq!(out.labels.count(SurfaceClass::Edge), 0);
        assert!(out.labels.count(SurfaceClass::Planar) > 0);
        for (p, e) in out.planar.scores().iter().zip(out.complement.scores()) {
            if let (Some(p), Some(e)) = (p, e) {
                assert_eq!(p + e, 1.0);
            }
        }
    }
}
