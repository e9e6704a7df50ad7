//! Per-sample drift metrics between a transfer-learning (TL) map and a
//! fine-tuned (FT) map of the same sample, architecture and method.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::{binarize, center_of_mass, AttributionMap, BinaryMask, MapError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {tl_height}x{tl_width} vs {ft_height}x{ft_width}")]
    DimensionMismatch { tl_height: usize, tl_width: usize, ft_height: usize, ft_width: usize },
    #[error("mask thresholds differ: {0} vs {1}")]
    ThresholdMismatch(f64, f64),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Why a metric is undefined, or why a record deserves caution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DriftFlag {
    TlDegenerate,
    FtDegenerate,
    EmptyTlMask,
    EmptyFtMask,
    ConstantCorr,
}

impl DriftFlag {
    pub fn marks_degenerate(self) -> bool {
        matches!(self, DriftFlag::TlDegenerate | DriftFlag::FtDegenerate)
    }
}

/// A metric value that may be undefined, together with the flags explaining it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Measurement {
    pub value: Option<f64>,
    pub flags: BTreeSet<DriftFlag>,
}

impl Measurement {
    fn defined(value: f64) -> Self {
        Self { value: Some(value), flags: BTreeSet::new() }
    }

    fn undefined(flags: impl IntoIterator<Item = DriftFlag>) -> Self {
        Self { value: None, flags: flags.into_iter().collect() }
    }
}

/// The four drift metrics for one (sample, architecture, method) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub sample_id: String,
    pub architecture: String,
    pub method: String,
    pub spatial_displacement: Option<f64>,
    pub overlap_iou: Option<f64>,
    pub pattern_correlation: Option<f64>,
    pub concentration_change: f64,
    pub flags: BTreeSet<DriftFlag>,
}

impl DriftRecord {
    pub fn is_degenerate(&self) -> bool {
        self.flags.iter().any(|f| f.marks_degenerate())
    }
}

/// Identifiers attached to a record.
#[derive(Debug, Clone, Copy)]
pub struct RecordIds<'a> {
    pub sample_id: &'a str,
    pub architecture: &'a str,
    pub method: &'a str,
}

fn check_shape(tl: &AttributionMap, ft: &AttributionMap) -> Result<(), MetricError> {
    if tl.same_shape(ft) {
        Ok(())
    } else {
        Err(MetricError::DimensionMismatch {
            tl_height: tl.height(),
            tl_width: tl.width(),
            ft_height: ft.height(),
            ft_width: ft.width(),
        })
    }
}

fn degeneracy_flags(tl: &AttributionMap, ft: &AttributionMap) -> Vec<DriftFlag> {
    let mut flags = Vec::new();
    if tl.is_degenerate() {
        flags.push(DriftFlag::TlDegenerate);
    }
    if ft.is_degenerate() {
        flags.push(DriftFlag::FtDegenerate);
    }
    flags
}

/// Centroid shift divided by the grid diagonal `sqrt(h² + w²)`.
pub fn spatial_displacement(tl: &AttributionMap, ft: &AttributionMap) -> Result<Measurement, MetricError> {
    check_shape(tl, ft)?;
    let flags = degeneracy_flags(tl, ft);
    if !flags.is_empty() {
        return Ok(Measurement::undefined(flags));
    }
    let a = center_of_mass(tl)?;
    let b = center_of_mass(ft)?;
    let diagonal = (tl.height() as f64).hypot(tl.width() as f64);
    Ok(Measurement::defined(a.distance(&b) / diagonal))
}

/// Intersection over union of two salient-region masks.
///
/// One empty mask gives 0; two empty masks leave the metric undefined.
pub fn overlap_iou(tl_mask: &BinaryMask, ft_mask: &BinaryMask) -> Result<Measurement, MetricError> {
    if tl_mask.height() != ft_mask.height() || tl_mask.width() != ft_mask.width() {
        return Err(MetricError::DimensionMismatch {
            tl_height: tl_mask.height(),
            tl_width: tl_mask.width(),
            ft_height: ft_mask.height(),
            ft_width: ft_mask.width(),
        });
    }
    if tl_mask.threshold() != ft_mask.threshold() {
        return Err(MetricError::ThresholdMismatch(tl_mask.threshold(), ft_mask.threshold()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in tl_mask.bits().iter().zip(ft_mask.bits()) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    let mut flags = BTreeSet::new();
    if tl_mask.is_empty() {
        flags.insert(DriftFlag::EmptyTlMask);
    }
    if ft_mask.is_empty() {
        flags.insert(DriftFlag::EmptyFtMask);
    }
    let value = (union > 0).then(|| inter as f64 / union as f64);
    Ok(Measurement { value, flags })
}

/// Pearson correlation of the flattened maps, accumulated in a single pass
/// with running co-moments.
pub fn pattern_correlation(tl: &AttributionMap, ft: &AttributionMap) -> Result<Measurement, MetricError> {
    check_shape(tl, ft)?;
    let mut n = 0.0f64;
    let (mut mean_x, mut mean_y) = (0.0f64, 0.0f64);
    let (mut m2_x, mut m2_y, mut c_xy) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in tl.values().iter().zip(ft.values()) {
        let (x, y) = (f64::from(x), f64::from(y));
        n += 1.0;
        let dx = x - mean_x;
        mean_x += dx / n;
        let dy = y - mean_y;
        mean_y += dy / n;
        m2_x += dx * (x - mean_x);
        m2_y += dy * (y - mean_y);
        c_xy += dx * (y - mean_y);
    }
    if m2_x <= 0.0 || m2_y <= 0.0 || tl.is_degenerate() || ft.is_degenerate() {
        let mut flags = degeneracy_flags(tl, ft);
        flags.push(DriftFlag::ConstantCorr);
        return Ok(Measurement::undefined(flags));
    }
    let r = c_xy / (m2_x.sqrt() * m2_y.sqrt());
    Ok(Measurement::defined(r.clamp(-1.0, 1.0)))
}

/// Shannon entropy of the map viewed as a distribution over pixels, divided
/// by `ln(h·w)`. Degenerate maps are assigned 1.
pub fn normalized_entropy(map: &AttributionMap) -> f64 {
    if map.is_degenerate() || map.len() < 2 {
        return 1.0;
    }
    let mass = map.total_mass();
    let mut h = 0.0f64;
    for &v in map.values() {
        if v > 0.0 {
            let p = f64::from(v) / mass;
            h -= p * p.ln();
        }
    }
    (h / (map.len() as f64).ln()).clamp(0.0, 1.0)
}

/// `Ĥ(ft) − Ĥ(tl)`; negative means evidence became more concentrated.
pub fn concentration_change(tl: &AttributionMap, ft: &AttributionMap) -> Result<f64, MetricError> {
    check_shape(tl, ft)?;
    Ok(normalized_entropy(ft) - normalized_entropy(tl))
}

/// Computes all four metrics for one map pair, deriving masks at `threshold`.
pub fn drift(
    tl: &AttributionMap,
    ft: &AttributionMap,
    threshold: f64,
    ids: RecordIds<'_>,
) -> Result<DriftRecord, MetricError> {
    check_shape(tl, ft)?;
    let tl_mask = binarize(tl, threshold)?;
    let ft_mask = binarize(ft, threshold)?;

    let displacement = spatial_displacement(tl, ft)?;
    let iou = overlap_iou(&tl_mask, &ft_mask)?;
    let corr = pattern_correlation(tl, ft)?;
    let conc = concentration_change(tl, ft)?;

    let mut flags: BTreeSet<DriftFlag> = degeneracy_flags(tl, ft).into_iter().collect();
    flags.extend(&displacement.flags);
    flags.extend(&iou.flags);
    flags.extend(&corr.flags);

    Ok(DriftRecord {
        sample_id: ids.sample_id.to_owned(),
        architecture: ids.architecture.to_owned(),
        method: ids.method.to_owned(),
        spatial_displacement: displacement.value,
        overlap_iou: iou.value,
        pattern_correlation: corr.value,
        concentration_change: conc,
        flags,
    })
}
