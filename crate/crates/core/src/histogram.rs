//! Shape histograms: a `k_mu × k_sigma` grid of INAD pair frequencies,
//! normalized so the fullest bin is 1, and back-projection of such a grid
//! onto a test field.
//!
//! A value `v` on an axis `[0, max]` with `k` bins falls in bin
//! `⌊v · k / max⌋`, clamped to `k − 1` so that values at or beyond the top of
//! the range land in the last bin.

use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inad::InadField;

pub const FORMAT_NAME: &str = "shape-histogram";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MU_MAX: f64 = 90.0;
pub const DEFAULT_SIGMA_MAX: f64 = 45.0;
pub const DEFAULT_BINS: usize = 10;

/// Relative difference in radius above which back-projection warns.
const RADIUS_MISMATCH_TOLERANCE: f64 = 1e-9;

pub fn bin_id(value: f64, range_max: f64, k: usize) -> Result<usize> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::NegativeValue(value));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("bin count must be at least 1".into()));
    }
    if !(range_max > 0.0 && range_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "range max must be positive, got {range_max}"
        )));
    }
    Ok(bin_unchecked(value, range_max, k))
}

#[inline]
fn bin_unchecked(value: f64, range_max: f64, k: usize) -> usize {
    let b = (value * k as f64 / range_max).floor();
    (b as usize).min(k - 1)
}

/// Bin counts and axis ranges of a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinLayout {
    pub k_mu: usize,
    pub k_sigma: usize,
    pub mu_max: f64,
    pub sigma_max: f64,
}

impl Default for BinLayout {
    fn default() -> Self {
        Self::square(DEFAULT_BINS)
    }
}

impl BinLayout {
    pub fn new(k_mu: usize, k_sigma: usize) -> Self {
        Self {
            k_mu,
            k_sigma,
            mu_max: DEFAULT_MU_MAX,
            sigma_max: DEFAULT_SIGMA_MAX,
        }
    }

    pub fn square(k: usize) -> Self {
        Self::new(k, k)
    }

    pub fn with_ranges(mut self, mu_max: f64, sigma_max: f64) -> Self {
        self.mu_max = mu_max;
        self.sigma_max = sigma_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_mu == 0 || self.k_sigma == 0 {
            return Err(Error::InvalidParameter("bin counts must be at least 1".into()));
        }
        for (name, v) in [("mu_max", self.mu_max), ("sigma_max", self.sigma_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.k_mu * self.k_sigma
    }

    /// Row-major cell index for an INAD pair; out-of-range values clamp.
    pub fn cell(&self, mu: f64, sigma: f64) -> usize {
        let bm = bin_unchecked(mu.max(0.0), self.mu_max, self.k_mu);
        let bs = bin_unchecked(sigma.max(0.0), self.sigma_max, self.k_sigma);
        bm * self.k_sigma + bs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeHistogram {
    layout: BinLayout,
    counts: Vec<u64>,
    bins: Vec<f64>,
    sample_count: u64,
    source_r: f64,
}

impl ShapeHistogram {
    pub fn layout(&self) -> &BinLayout {
        &self.layout
    }

    pub fn k_mu(&self) -> usize {
        self.layout.k_mu
    }

    pub fn k_sigma(&self) -> usize {
        self.layout.k_sigma
    }

    /// Max-normalized values, row-major over (μ bin, σ bin).
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    /// Raw counts before normalization.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn value(&self, mu_bin: usize, sigma_bin: usize) -> f64 {
        self.bins[mu_bin * self.layout.k_sigma + sigma_bin]
    }

    pub fn count(&self, mu_bin: usize, sigma_bin: usize) -> u64 {
        self.counts[mu_bin * self.layout.k_sigma + sigma_bin]
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn source_r(&self) -> f64 {
        self.source_r
    }

    /// Bin `(mu_bin, sigma_bin)` holding the largest count (first in
    /// row-major order on ties).
    pub fn peak(&self) -> (usize, usize) {
        let idx = self
            .counts
            .iter()
            .enumerate()
            .fold((0, 0u64), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
            .0;
        (idx / self.layout.k_sigma, idx % self.layout.k_sigma)
    }

    /// Score for an INAD pair.
    pub fn lookup(&self, mu: f64, sigma: f64) -> f64 {
        self.bins[self.layout.cell(mu, sigma)]
    }

    fn from_counts(layout: BinLayout, counts: Vec<u64>, source_r: f64) -> Self {
        let max = counts.iter().copied().max().unwrap_or(0);
        let sample_count = counts.iter().sum();
        let bins = counts
            .iter()
            .map(|&c| if max == 0 { 0.0 } else { c as f64 / max as f64 })
            .collect();
        Self {
            layout,
            counts,
            bins,
            sample_count,
            source_r,
        }
    }

    pub fn to_json(&self) -> String {
        let doc = HistogramDocument {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            k_mu: self.layout.k_mu,
            k_sigma: self.layout.k_sigma,
            mu_range: [0.0, self.layout.mu_max],
            sigma_range: [0.0, self.layout.sigma_max],
            source_r: self.source_r,
            sample_count: self.sample_count,
            counts: Some(self.counts.clone()),
            bins: self.bins.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("histogram document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: HistogramDocument = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => Error::SchemaMismatch(e.to_string()),
            _ => Error::parse(e.line(), e.to_string()),
        })?;
        doc.into_histogram()
    }

    /// Plain-text grid, μ bins as rows.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>10}", "mu\\sigma");
        let sw = self.layout.sigma_max / self.layout.k_sigma as f64;
        for s in 0..self.layout.k_sigma {
            let _ = write!(out, " {:>6.1}", s as f64 * sw);
        }
        out.push('\n');
        let mw = self.layout.mu_max / self.layout.k_mu as f64;
        for m in 0..self.layout.k_mu {
            let _ = write!(out, "{:>10.1}", m as f64 * mw);
            for s in 0..self.layout.k_sigma {
                let _ = write!(out, " {:>6.3}", self.value(m, s));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistogramDocument {
    format: String,
    version: u32,
    k_mu: usize,
    k_sigma: usize,
    mu_range: [f64; 2],
    sigma_range: [f64; 2],
    source_r: f64,
    sample_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<u64>>,
    bins: Vec<f64>,
}

impl HistogramDocument {
    fn into_histogram(self) -> Result<ShapeHistogram> {
        if self.format != FORMAT_NAME {
            return Err(Error::SchemaMismatch(format!("unexpected format {:?}", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        if self.mu_range[0] != 0.0 || self.sigma_range[0] != 0.0 {
            return Err(Error::InvariantViolation("axis ranges must start at 0".into()));
        }
        let layout = BinLayout::new(self.k_mu, self.k_sigma).with_ranges(self.mu_range[1], self.sigma_range[1]);
        layout
            .validate()
            .map_err(|e| Error::InvariantViolation(e.to_string()))?;
        if self.bins.len() != layout.cell_count() {
            return Err(Error::InvariantViolation(format!(
                "expected {} bins, found {}",
                layout.cell_count(),
                self.bins.len()
            )));
        }
        if let Some(v) = self.bins.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvariantViolation(format!("bin value {v} outside [0, 1]")));
        }
        let max = self.bins.iter().copied().fold(0.0, f64::max);
        if self.sample_count > 0 && max != 1.0 {
            return Err(Error::InvariantViolation(format!("largest bin is {max}, expected 1")));
        }
        let counts = match self.counts {
            Some(c) => {
                if c.len() != self.bins.len() {
                    return Err(Error::InvariantViolation("counts and bins differ in length".into()));
                }
                if c.iter().sum::<u64>() != self.sample_count {
                    return Err(Error::InvariantViolation("counts do not sum to sample_count".into()));
                }
                c
            }
            None => vec![0; self.bins.len()],
        };
        Ok(ShapeHistogram {
            layout,
            counts,
            bins: self.bins,
            sample_count: self.sample_count,
            source_r: self.source_r,
        })
    }
}

/// Accumulates every valid INAD pair of `field` and max-normalizes.
pub fn build_histogram(field: &InadField, layout: BinLayout) -> Result<ShapeHistogram> {
    layout.validate()?;
    if field.valid_count() == 0 {
        return Err(Error::NoValidPoints);
    }
    let cells = layout.cell_count();
    let counts = field
        .pairs()
        .par_iter()
        .fold(
            || vec![0u64; cells],
            |mut acc, p| {
                if let Some(p) = p {
                    acc[layout.cell(p.mu, p.sigma)] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; cells],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(ShapeHistogram::from_counts(layout, counts, field.radius()))
}

/// Per-point scores in [0, 1]; `None` where the INAD field is invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodField {
    scores: Vec<Option<f64>>,
    radius: f64,
}

impl LikelihoodField {
    pub fn new(scores: Vec<Option<f64>>, radius: f64) -> Self {
        Self { scores, radius }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<f64> {
        self.scores[id]
    }

    pub fn scores(&self) -> &[Option<f64>] {
        &self.scores
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn valid_count(&self) -> usize {
        self.scores.iter().filter(|s| s.is_some()).count()
    }

    pub fn mean(&self) -> Option<f64> {
        let (sum, n) = self
            .scores
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// `1 − score` at every valid point.
    pub fn complement(&self) -> LikelihoodField {
        LikelihoodField {
            scores: self.scores.iter().map(|s| s.map(|v| 1.0 - v)).collect(),
            radius: self.radius,
        }
    }

    /// CSV with header `point_id,score,valid`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("point_id,score,valid\n");
        for (i, s) in self.scores.iter().enumerate() {
            match s {
                Some(v) => {
                    let _ = writeln!(out, "{i},{v:.9},1");
                }
                None => {
                    let _ = writeln!(out, "{i},,0");
                }
            }
        }
        out
    }
}

/// True when the two radii differ beyond floating-point noise.
pub fn radius_mismatch(a: f64, b: f64) -> bool {
    (a - b).abs() > RADIUS_MISMATCH_TOLERANCE * a.abs().max(b.abs())
}

/// Looks up every valid point's INAD bin in `h`.
///
/// Logs a warning when the field was computed at a different radius than the
/// histogram; the lookup still proceeds.
pub fn back_project(h: &ShapeHistogram, field: &InadField) -> LikelihoodField {
    if radius_mismatch(h.source_r, field.radius()) {
        warn!(
            "back-projecting a histogram built at r = {} onto a field computed at r = {}",
            h.source_r,
            field.radius()
        );
    }
    let scores = field
        .pairs()
        .par_iter()
        .map(|p| p.map(|p| h.lookup(p.mu, p.sigma)))
        .collect();
    LikelihoodField::new(scores, field.radius())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inad::{InadPair, InadParams};

    fn pair(mu: f64, sigma: f64) -> Option<InadPair> {
        Some(InadPair {
            mu,
            sigma,
            inlier_count: 5,
        })
    }

    fn inad(pairs: Vec<Option<InadPair>>) -> InadField {
        InadField::new(pairs, InadParams::new(0.01))
    }

    #[test]
    fn bin_id_cases() {
        assert_eq!(bin_id(0.0, 90.0, 10).unwrap(), 0);
        assert_eq!(bin_id(0.0, 45.0, 1).unwrap(), 0);
        assert_eq!(bin_id(45.0, 90.0, 10).unwrap(), 5);
        assert_eq!(bin_id(90.0, 90.0, 10).unwrap(), 9);
        assert_eq!(bin_id(1000.0, 90.0, 10).unwrap(), 9);
        assert_eq!(bin_id(8.999, 90.0, 10).unwrap(), 0);
        assert!(matches!(bin_id(-0.5, 90.0, 10), Err(Error::NegativeValue(_))));
        assert!(bin_id(f64::NAN, 90.0, 10).is_err());
        assert!(bin_id(1.0, 90.0, 0).is_err());
        assert!(bin_id(1.0, 0.0, 10).is_err());
    }

    #[test]
    fn plane_histogram_single_bin() {
        let h = build_histogram(&inad(vec![pair(0.0, 0.0); 50]), BinLayout::square(10)).unwrap();
        assert_eq!(h.value(0, 0), 1.0);
        assert_eq!(h.bins().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(h.sample_count(), 50);
        assert_eq!(h.peak(), (0, 0));
    }

    #[test]
    fn two_bins_ratio() {
        let mut pairs = vec![pair(1.0, 1.0); 30];
        pairs.extend(vec![pair(50.0, 20.0); 10]);
        pairs.push(None);
        let h = build_histogram(&inad(pairs), BinLayout::square(10)).unwrap();
        assert_eq!(h.value(0, 0), 1.0);
        assert_eq!(h.value(5, 4), 10.0 / 30.0);
        assert_eq!(h.sample_count(), 40);
    }

    #[test]
    fn empty_field_rejected() {
        assert!(matches!(
            build_histogram(&inad(vec![None; 3]), BinLayout::default()),
            Err(Error::NoValidPoints)
        ));
        assert!(matches!(
            build_histogram(&inad(vec![]), BinLayout::default()),
            Err(Error::NoValidPoints)
        ));
    }

    #[test]
    fn back_projection_lookups() {
        let plane = build_histogram(&inad(vec![pair(0.0, 0.0); 10]), BinLayout::square(10)).unwrap();
        let test = inad(vec![pair(0.0, 0.0), pair(30.0, 2.0), None]);
        let l = back_project(&plane, &test);
        assert_eq!(l.scores(), &[Some(1.0), Some(0.0), None]);
        let edge = l.complement();
        assert_eq!(edge.scores(), &[Some(0.0), Some(1.0), None]);
    }

    #[test]
    fn json_round_trip() {
        let mut pairs = vec![pair(3.0, 1.0); 7];
        pairs.extend(vec![pair(40.0, 10.0); 3]);
        let h = build_histogram(&inad(pairs), BinLayout::new(10, 20)).unwrap();
        let back = ShapeHistogram::from_json(&h.to_json()).unwrap();
        assert_eq!(back, h);
        assert!(back
            .bins()
            .iter()
            .zip(h.bins())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn json_schema_errors() {
        let h = build_histogram(&inad(vec![pair(0.0, 0.0); 4]), BinLayout::square(2)).unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&h.to_json()).unwrap();

        let mut missing = doc.clone();
        missing.as_object_mut().unwrap().remove("k_sigma");
        assert!(matches!(
            ShapeHistogram::from_json(&missing.to_string()),
            Err(Error::SchemaMismatch(_))
        ));

        let mut version = doc.clone();
        version["version"] = 99.into();
        assert!(matches!(
            ShapeHistogram::from_json(&version.to_string()),
            Err(Error::SchemaMismatch(_))
        ));

        doc["bins"][1] = serde_json::json!(1.2);
        doc.as_object_mut().unwrap().remove("counts");
        assert!(matches!(
            ShapeHistogram::from_json(&doc.to_string()),
            Err(Error::InvariantViolation(_))
        ));

        assert!(matches!(
            ShapeHistogram::from_json("{ not json"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_export() {
        let l = LikelihoodField::new(vec![Some(0.5), None], 0.01);
        assert_eq!(l.to_csv(), "point_id,score,valid\n0,0.500000000,1\n1,,0\n");
    }
}
