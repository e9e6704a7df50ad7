//! Attribution-map representation: min-max normalization, thresholding into
//! salient-region masks, and intensity-weighted centroids.
//!
//! Grids are row-major with a 0-based top-left origin. Values are stored as
//! 32-bit floats (the width of the on-disk container); every reduction over
//! them is carried out in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default salient-region threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("grid is empty (height·width = 0)")]
    EmptyGrid,
    #[error("grid rows have unequal lengths (row {row} has {found}, expected {expected})")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("map is not normalized")]
    NotNormalized,
    #[error("threshold {0} outside the open interval (0, 1)")]
    ThresholdOutOfRange(f64),
    #[error("map has zero total mass; centroid undefined")]
    ZeroMass,
    #[error("value buffer holds {found} entries, expected {expected}")]
    LengthMismatch { found: usize, expected: usize },
}

/// One normalized 2D saliency map.
///
/// Only constructible through [`normalize`] or [`AttributionMap::from_normalized`],
/// both of which enforce the range invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    degenerate: bool,
}

impl AttributionMap {
    /// Wraps values that are already normalized to `[0, 1]`.
    ///
    /// A constant grid is accepted only when it is all zeros (the degenerate
    /// form); otherwise min must be exactly 0 and max exactly 1.
    pub fn from_normalized(height: usize, width: usize, values: Vec<f32>) -> Result<Self, MapError> {
        if height == 0 || width == 0 {
            return Err(MapError::EmptyGrid);
        }
        if values.len() != height * width {
            return Err(MapError::LengthMismatch { found: values.len(), expected: height * width });
        }
        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(MapError::NonFinite { row: k / width, col: k % width });
            }
            min = min.min(v);
            max = max.max(v);
        }
        let degenerate = min == max;
        let valid = if degenerate { max == 0.0 } else { min == 0.0 && max == 1.0 };
        if !valid {
            return Err(MapError::NotNormalized);
        }
        Ok(Self { height, width, values, degenerate })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Always true: the type can only hold normalized maps.
    pub fn is_normalized(&self) -> bool {
        true
    }

    /// True iff the raw map was constant (stored as all zeros).
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn same_shape(&self, other: &AttributionMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum()
    }
}

/// Min-max rescale of a raw grid to `[0, 1]`.
///
/// Constant grids map to all zeros with the degenerate flag set.
pub fn normalize(raw: &[Vec<f64>]) -> Result<AttributionMap, MapError> {
    let height = raw.len();
    let width = raw.first().map_or(0, Vec::len);
    if height == 0 || width == 0 {
        return Err(MapError::EmptyGrid);
    }
    let mut flat = Vec::with_capacity(height * width);
    for (row, r) in raw.iter().enumerate() {
        if r.len() != width {
            return Err(MapError::Ragged { row, found: r.len(), expected: width });
        }
        flat.extend_from_slice(r);
    }
    normalize_flat(height, width, &flat)
}

/// Row-major variant of [`normalize`].
pub fn normalize_flat(height: usize, width: usize, raw: &[f64]) -> Result<AttributionMap, MapError> {
    if height == 0 || width == 0 {
        return Err(MapError::EmptyGrid);
    }
    if raw.len() != height * width {
        return Err(MapError::LengthMismatch { found: raw.len(), expected: height * width });
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (k, &v) in raw.iter().enumerate() {
        if !v.is_finite() {
            return Err(MapError::NonFinite { row: k / width, col: k % width });
        }
        min = min.min(v);
        max = max.max(v);
    }
    let range = max - min;
    // max - min can overflow to infinity for finite inputs of opposite sign.
    let degenerate = range == 0.0;
    let values = if degenerate {
        vec![0.0; raw.len()]
    } else if range.is_finite() {
        raw.iter().map(|&v| ((v - min) / range) as f32).collect()
    } else {
        raw.iter().map(|&v| (v / 2.0 - min / 2.0) / (max / 2.0 - min / 2.0)).map(|v| v as f32).collect()
    };
    Ok(AttributionMap { height, width, values, degenerate })
}

/// Salient-region mask `value > threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    threshold: f64,
}

impl BinaryMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Builds a mask directly from bits; used by tests and the synthetic generators.
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>, threshold: f64) -> Result<Self, MapError> {
        if height == 0 || width == 0 {
            return Err(MapError::EmptyGrid);
        }
        if bits.len() != height * width {
            return Err(MapError::LengthMismatch { found: bits.len(), expected: height * width });
        }
        check_threshold(threshold)?;
        Ok(Self { height, width, bits, threshold })
    }
}

fn check_threshold(threshold: f64) -> Result<(), MapError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(MapError::ThresholdOutOfRange(threshold))
    }
}

pub fn binarize(map: &AttributionMap, threshold: f64) -> Result<BinaryMask, MapError> {
    if !map.is_normalized() {
        return Err(MapError::NotNormalized);
    }
    check_threshold(threshold)?;
    // Compare at storage precision so a stored 0.2 is not above a 0.2 threshold.
    let cut = threshold as f32;
    let bits = map.values.iter().map(|&v| v > cut).collect();
    Ok(BinaryMask { height: map.height, width: map.width, bits, threshold })
}

/// Intensity-weighted center of mass, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub row: f64,
    pub col: f64,
}

impl Centroid {
    pub fn distance(&self, other: &Centroid) -> f64 {
        (self.row - other.row).hypot(self.col - other.col)
    }
}

/// Centroid of the continuous normalized map (not of its mask).
pub fn center_of_mass(map: &AttributionMap) -> Result<Centroid, MapError> {
    if map.degenerate {
        return Err(MapError::ZeroMass);
    }
    let mut mass = 0.0f64;
    let mut row_moment = 0.0f64;
    let mut col_moment = 0.0f64;
    for (i, row) in map.values.chunks_exact(map.width).enumerate() {
        let mut row_mass = 0.0f64;
        for (j, &v) in row.iter().enumerate() {
            let v = f64::from(v);
            row_mass += v;
            col_moment += j as f64 * v;
        }
        mass += row_mass;
        row_moment += i as f64 * row_mass;
    }
    if mass <= 0.0 {
        return Err(MapError::ZeroMass);
    }
    // Clamp rounding overshoot back into the grid.
    let row = (row_moment / mass).clamp(0.0, (map.height - 1) as f64);
    let col = (col_moment / mass).clamp(0.0, (map.width - 1) as f64);
    Ok(Centroid { row, col })
}
