//! Segmentation metrics against ground-truth masks and the per-point INAD
//! timing benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{LabelMask, PointCloud, SurfaceClass};
use crate::error::{Error, Result};
use crate::inad::{inad_from_neighbors, Rejection, DEFAULT_OUTLIER_RATE};
use crate::normals::NormalField;
use crate::spatial::KdTree;

/// Binary confusion counts for one positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR/(P+R)`, zero when both are zero.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Confusion counts for `positive`. Points whose ground truth is
/// `Unlabeled` are skipped; any other prediction, including `Unlabeled`,
/// counts as negative unless it equals `positive`.
pub fn confusion(pred: &LabelMask, gt: &LabelMask, positive: SurfaceClass) -> Result<Confusion> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if g == SurfaceClass::Unlabeled {
            continue;
        }
        match (p == positive, g == positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: SurfaceClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub confusion: Confusion,
}

impl ClassMetrics {
    fn from_confusion(class: SurfaceClass, confusion: Confusion) -> Self {
        Self {
            class,
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            iou: confusion.iou(),
            confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    /// Mean IoU over `classes`.
    pub miou: f64,
    /// Points with a ground-truth label.
    pub evaluated: u64,
    pub parameters: BTreeMap<String, serde_json::Value>,
    /// Wall times in seconds, keyed by stage.
    pub timings: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn class(&self, class: SurfaceClass) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn with_parameter(mut self, name: &str, value: impl Serialize) -> Self {
        let value = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.parameters.insert(name.to_owned(), value);
        self
    }

    pub fn with_timing(mut self, stage: &str, seconds: f64) -> Self {
        self.timings.insert(stage.to_owned(), seconds);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    /// Aligned plain-text table, one row per class plus the mIoU line.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "class", "precision", "recall", "F1", "IoU", "TP", "FP", "FN"
        );
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>9} {:>9}",
                c.class.name(),
                c.precision,
                c.recall,
                c.f1,
                c.iou,
                c.confusion.tp,
                c.confusion.fp,
                c.confusion.fn_
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>9.4}   ({} points evaluated)",
            "mIoU", self.miou, self.evaluated
        );
        out
    }
}

/// Per-class metrics over `classes`; mIoU is their mean IoU.
pub fn metrics(pred: &LabelMask, gt: &LabelMask, classes: &[SurfaceClass]) -> Result<MetricsReport> {
    if classes.is_empty() {
        return Err(Error::InvalidParameter("at least one class is required".into()));
    }
    let per_class = classes
        .iter()
        .map(|&class| Ok(ClassMetrics::from_confusion(class, confusion(pred, gt, class)?)))
        .collect::<Result<Vec<_>>>()?;
    let miou = per_class.iter().map(|c| c.iou).sum::<f64>() / per_class.len() as f64;
    let evaluated = gt.labels().iter().filter(|&&g| g != SurfaceClass::Unlabeled).count() as u64;
    Ok(MetricsReport {
        classes: per_class,
        miou,
        evaluated,
        parameters: BTreeMap::new(),
        timings: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub k_list: Vec<usize>,
    /// Timed passes after one discarded warm-up pass.
    pub repetitions: usize,
    /// Number of query points per pass; all valid points when `None`.
    pub sample_points: Option<usize>,
    pub outlier_rate: f64,
    pub rejection: Rejection,
    /// Spread queries over the rayon pool. Per-point figures then measure
    /// throughput rather than single-thread latency.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            k_list: vec![10, 50, 100, 250, 500],
            repetitions: 5,
            sample_points: Some(2000),
            outlier_rate: DEFAULT_OUTLIER_RATE,
            rejection: Rejection::default(),
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub k: usize,
    /// Median over repetitions of the mean per-point time.
    pub median_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub points_per_pass: usize,
    pub repetitions: usize,
    /// Least-squares slope of log(time) against log(k); `None` with fewer
    /// than two distinct k.
    pub loglog_slope: Option<f64>,
}

impl BenchReport {
    pub fn row(&self, k: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench report serializes")
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6} {:>14} {:>10} {:>10}", "k", "median µs/pt", "min", "max");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>6} {:>14.3} {:>10.3} {:>10.3}",
                r.k, r.median_us, r.min_us, r.max_us
            );
        }
        if let Some(s) = self.loglog_slope {
            let _ = writeln!(out, "log-log slope: {s:.3}");
        }
        out
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Times the per-point INAD computation: the k-NN query, the inter-normal
/// angles, outlier rejection and the (μ, σ) statistics. Runs on the calling
/// thread unless `config.parallel` is set. Reports the median over
/// repetitions of the mean time per query point.
pub fn bench_inad(
    cloud: &PointCloud,
    normals: &NormalField,
    index: &KdTree,
    config: &BenchConfig,
) -> Result<BenchReport> {
    if config.k_list.is_empty() || config.k_list.contains(&0) {
        return Err(Error::InvalidParameter("k list must be non-empty and positive".into()));
    }
    if config.repetitions == 0 {
        return Err(Error::InvalidParameter("repetitions must be at least 1".into()));
    }
    if normals.len() != cloud.len() || index.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: normals.len(),
        });
    }
    let k_max = *config.k_list.iter().max().expect("non-empty");
    if cloud.len() <= k_max {
        return Err(Error::InsufficientDensity(format!(
            "{} points cannot supply {k_max} neighbors per point",
            cloud.len()
        )));
    }
    let valid: Vec<usize> = (0..cloud.len()).filter(|&i| normals.get(i).is_some()).collect();
    if valid.is_empty() {
        return Err(Error::NoValidPoints);
    }
    let queries: Vec<usize> = match config.sample_points {
        Some(n) if n < valid.len() => {
            let n = n.max(1);
            (0..n).map(|j| valid[j * valid.len() / n]).collect()
        }
        _ => valid,
    };
    let points = cloud.points();
    let per_point = |i: usize, k: usize, neighbors: &mut Vec<usize>, scratch: &mut Vec<f64>| -> f64 {
        neighbors.clear();
        neighbors.extend(index.knn_search(&points[i], k, Some(i)).into_iter().map(|(j, _)| j));
        inad_from_neighbors(normals, i, neighbors, config.outlier_rate, config.rejection, scratch).map_or(0.0, |p| p.mu)
    };
    let mut neighbors = Vec::with_capacity(k_max);
    let mut scratch = Vec::with_capacity(k_max);
    let mut pass = |k: usize| -> f64 {
        let start = Instant::now();
        let sink: f64 = if config.parallel {
            queries
                .par_iter()
                .map_init(
                    || (Vec::with_capacity(k), Vec::with_capacity(k)),
                    |(n, s), &i| per_point(i, k, n, s),
                )
                .sum()
        } else {
            queries
                .iter()
                .map(|&i| per_point(i, k, &mut neighbors, &mut scratch))
                .sum()
        };
        std::hint::black_box(sink);
        start.elapsed().as_secs_f64() * 1e6 / queries.len() as f64
    };
    let mut rows = Vec::with_capacity(config.k_list.len());
    for &k in &config.k_list {
        pass(k);
        let mut times: Vec<f64> = (0..config.repetitions).map(|_| pass(k)).collect();
        let min_us = times.iter().copied().fold(f64::INFINITY, f64::min);
        let max_us = times.iter().copied().fold(0.0, f64::max);
        rows.push(BenchRow {
            k,
            median_us: median(&mut times),
            min_us,
            max_us,
        });
    }
    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.median_us).collect();
    Ok(BenchReport {
        loglog_slope: loglog_slope(&ks, &ts),
        rows,
        points_per_pass: queries.len(),
        repetitions: config.repetitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use SurfaceClass::{Curved, Planar, Unlabeled};

    fn mask(v: &[SurfaceClass]) -> LabelMask {
        LabelMask::new(v.to_vec())
    }

    #[test]
    fn identical_masks_have_no_errors() {
        let m = mask(&[Planar, Curved, Curved, Planar]);
        let c = confusion(&m, &m, Planar).unwrap();
        assert_eq!((c.fp, c.fn_, c.tp, c.tn), (0, 0, 2, 2));
        let r = metrics(&m, &m, &[Planar, Curved]).unwrap();
        assert!(r
            .classes
            .iter()
            .all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        assert_eq!(r.miou, 1.0);
    }

    #[test]
    fn all_positive_against_all_negative() {
        let pred = LabelMask::filled(Planar, 7);
        let gt = LabelMask::filled(Curved, 7);
        let c = confusion(&pred, &gt, Planar).unwrap();
        assert_eq!((c.tp, c.fp), (0, 7));
        assert_eq!(c.f1(), 0.0);
    }

    #[test]
    fn precision_half_recall_one() {
        let c = Confusion {
            tp: 50,
            fp: 50,
            fn_: 0,
            tn: 0,
        };
        assert_eq!(c.precision(), 0.5);
        assert_eq!(c.recall(), 1.0);
        assert_abs_diff_eq!(c.f1(), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn miou_is_mean_of_class_ious() {
        // planar: TP 8, FP 1, FN 1 -> 0.8; curved: TP 6, FP 2, FN 2 -> 0.6
        let mut pred = Vec::new();
        let mut gt = Vec::new();
        let mut push = |p, g, n| {
            for _ in 0..n {
                pred.push(p);
                gt.push(g);
            }
        };
        push(Planar, Planar, 8);
        push(Planar, Curved, 1);
        push(Curved, Planar, 1);
        push(Curved, Curved, 6);
        push(SurfaceClass::Edge, Curved, 1);
        push(Curved, SurfaceClass::Edge, 1);
        let r = metrics(&mask(&pred), &mask(&gt), &[Planar, Curved]).unwrap();
        assert_abs_diff_eq!(r.class(Planar).unwrap().iou, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(r.class(Curved).unwrap().iou, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(r.miou, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn unlabeled_truth_is_skipped_and_lengths_checked() {
        let pred = mask(&[Planar, Planar, Curved]);
        let gt = mask(&[Planar, Unlabeled, Unlabeled]);
        let c = confusion(&pred, &gt, Planar).unwrap();
        assert_eq!(c.total(), 1);
        assert!(matches!(
            confusion(&pred, &mask(&[Planar]), Planar),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn report_serializes_and_renders() {
        let m = mask(&[Planar, Curved]);
        let r = metrics(&m, &m, &[Planar, Curved])
            .unwrap()
            .with_parameter("tau", 0.5)
            .with_timing("total", 0.1);
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let table = r.render_table();
        assert!(table.contains("planar") && table.contains("mIoU"));
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.9)).collect();
        assert_abs_diff_eq!(loglog_slope(&xs, &ys).unwrap(), 0.9, epsilon = 1e-9);
        assert!(loglog_slope(&[1.0], &[1.0]).is_none());
    }
}
