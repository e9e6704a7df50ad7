//! Synthetic map pairs with closed-form drift, and whole synthetic cohorts
//! written to disk with a sidecar of expected per-sample metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{
    conventional_map_path, write_map, ClassInfo, CohortManifest, IoError, Phase, PhaseInfo, PhasePair, SampleRecord,
    SCHEMA_VERSION,
};
use crate::maps::{normalize_flat, AttributionMap, Centroid, MapError};
use crate::metrics::{DriftFlag, DriftRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("support {what} leaves the {height}x{width} grid")]
    ClippedSupport { what: &'static str, height: usize, width: usize },
    #[error("invalid synthesis parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Axis-aligned rectangle in pixel coordinates (top-left corner plus extent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self { row, col, height, width }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let rows = (self.row + self.height).min(other.row + other.height).saturating_sub(self.row.max(other.row));
        let cols = (self.col + self.width).min(other.col + other.width).saturating_sub(self.col.max(other.col));
        rows * cols
    }

    fn center(&self) -> Centroid {
        Centroid {
            row: self.row as f64 + (self.height as f64 - 1.0) / 2.0,
            col: self.col as f64 + (self.width as f64 - 1.0) / 2.0,
        }
    }

    fn contains(&self, row: usize, col: usize) -> bool {
        (self.row..self.row + self.height).contains(&row) && (self.col..self.col + self.width).contains(&col)
    }

    fn check(&self, what: &'static str, height: usize, width: usize) -> Result<(), SynthError> {
        if self.height == 0 || self.width == 0 {
            return Err(SynthError::InvalidParameters(format!("{what} rectangle is empty")));
        }
        if self.row + self.height > height || self.col + self.width > width {
            return Err(SynthError::ClippedSupport { what, height, width });
        }
        if self.area() == height * width {
            return Err(SynthError::InvalidParameters(format!("{what} rectangle covers the whole grid")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SynthKind {
    /// A jittered Gaussian blob, translated by `offset` between phases.
    TranslatedBlob { center: (f64, f64), sigma: f64, offset: (i64, i64) },
    /// Two rectangles filled with random intensities in `[0.6, 1]`.
    /// Expected IoU holds for thresholds below 0.6.
    MaskOverlap { tl: Rect, ft: Rect },
    /// Two uniform rectangles; every metric has a closed form.
    MassSpread { tl: Rect, ft: Rect },
    /// The same random map at both phases.
    Identical,
    /// A constant TL map against a random FT map.
    DegeneratePair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

/// Closed-form expectations; `None` means "not predicted" unless a flag
/// states the metric is undefined.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDrift {
    pub spatial_displacement: Option<f64>,
    pub overlap_iou: Option<f64>,
    pub pattern_correlation: Option<f64>,
    pub concentration_change: Option<f64>,
    pub flags: BTreeSet<DriftFlag>,
    /// Discrete TL centroid summed by the generator itself.
    pub tl_centroid: Option<Centroid>,
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub tl: AttributionMap,
    pub ft: AttributionMap,
    pub expected: ExpectedDrift,
}

impl SynthSpec {
    /// A random in-grid translated blob. Grid sides must be at least 8.
    pub fn random_translated_blob(height: usize, width: usize, rng: &mut impl Rng) -> SynthSpec {
        let max_sigma = ((height.min(width) as f64) / 8.0).max(0.4);
        let sigma = rng.gen_range(0.4..=max_sigma);
        let radius = blob_radius(sigma) as i64;
        let (h, w) = (height as i64, width as i64);
        // pick both anchors inside [radius, side - 1 - radius]
        let pick = |rng: &mut dyn rand::RngCore, side: i64| -> (i64, i64) {
            let lo = radius;
            let hi = side - 1 - radius;
            let a = rng.gen_range(lo..=hi);
            let b = rng.gen_range(lo..=hi);
            (a, b - a)
        };
        let (ar, dr) = pick(rng, h);
        let (ac, dc) = pick(rng, w);
        let jitter_r = rng.gen_range(-0.5..0.5);
        let jitter_c = rng.gen_range(-0.5..0.5);
        SynthSpec {
            kind: SynthKind::TranslatedBlob {
                center: (ar as f64 + jitter_r, ac as f64 + jitter_c),
                sigma,
                offset: (dr, dc),
            },
            height,
            width,
            seed: rng.gen(),
        }
    }

    /// Two random rectangles, each strictly smaller than the grid.
    pub fn random_mask_overlap(height: usize, width: usize, rng: &mut impl Rng) -> SynthSpec {
        let tl = random_rect(height, width, rng);
        let ft = random_rect(height, width, rng);
        SynthSpec { kind: SynthKind::MaskOverlap { tl, ft }, height, width, seed: rng.gen() }
    }

    pub fn random_mass_spread(height: usize, width: usize, rng: &mut impl Rng) -> SynthSpec {
        let tl = random_rect(height, width, rng);
        let ft = random_rect(height, width, rng);
        SynthSpec { kind: SynthKind::MassSpread { tl, ft }, height, width, seed: rng.gen() }
    }
}

fn random_rect(height: usize, width: usize, rng: &mut impl Rng) -> Rect {
    loop {
        let rh = rng.gen_range(1..=height);
        let rw = rng.gen_range(1..=width);
        if rh * rw == height * width {
            continue;
        }
        let row = rng.gen_range(0..=height - rh);
        let col = rng.gen_range(0..=width - rw);
        return Rect::new(row, col, rh, rw);
    }
}

fn blob_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

pub fn generate(spec: &SynthSpec) -> Result<SynthPair, SynthError> {
    let (h, w) = (spec.height, spec.width);
    if h == 0 || w == 0 {
        return Err(SynthError::InvalidParameters("grid must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let diagonal = (h as f64).hypot(w as f64);
    match &spec.kind {
        SynthKind::TranslatedBlob { center, sigma, offset } => translated_blob(spec, *center, *sigma, *offset, &mut rng),
        SynthKind::MaskOverlap { tl, ft } => {
            tl.check("TL", h, w)?;
            ft.check("FT", h, w)?;
            let fill = |rect: &Rect, rng: &mut ChaCha8Rng| {
                let raw: Vec<f64> = (0..h * w)
                    .map(|k| if rect.contains(k / w, k % w) { rng.gen_range(0.6..=1.0) } else { 0.0 })
                    .collect();
                normalize_flat(h, w, &raw)
            };
            let tl_map = fill(tl, &mut rng)?;
            let ft_map = fill(ft, &mut rng)?;
            let inter = tl.intersection_area(ft);
            let union = tl.area() + ft.area() - inter;
            Ok(SynthPair {
                tl: tl_map,
                ft: ft_map,
                expected: ExpectedDrift { overlap_iou: Some(inter as f64 / union as f64), ..Default::default() },
            })
        }
        SynthKind::MassSpread { tl, ft } => {
            tl.check("TL", h, w)?;
            ft.check("FT", h, w)?;
            let fill = |rect: &Rect| {
                let raw: Vec<f64> = (0..h * w).map(|k| if rect.contains(k / w, k % w) { 1.0 } else { 0.0 }).collect();
                normalize_flat(h, w, &raw)
            };
            let n = (h * w) as f64;
            let (a, b) = (tl.area() as f64, ft.area() as f64);
            let inter = tl.intersection_area(ft) as f64;
            // Pearson correlation of two indicator vectors
            let corr = (n * inter - a * b) / ((a * (n - a)).sqrt() * (b * (n - b)).sqrt());
            Ok(SynthPair {
                tl: fill(tl)?,
                ft: fill(ft)?,
                expected: ExpectedDrift {
                    spatial_displacement: Some(tl.center().distance(&ft.center()) / diagonal),
                    overlap_iou: Some(inter / (a + b - inter)),
                    pattern_correlation: Some(corr),
                    concentration_change: Some((b.ln() - a.ln()) / n.ln()),
                    flags: BTreeSet::new(),
                    tl_centroid: Some(tl.center()),
                },
            })
        }
        SynthKind::Identical => {
            if h * w < 2 {
                return Err(SynthError::InvalidParameters("identical pair needs at least two pixels".into()));
            }
            let map = random_map(h, w, &mut rng)?;
            Ok(SynthPair {
                tl: map.clone(),
                ft: map,
                expected: ExpectedDrift {
                    spatial_displacement: Some(0.0),
                    overlap_iou: Some(1.0),
                    pattern_correlation: Some(1.0),
                    concentration_change: Some(0.0),
                    ..Default::default()
                },
            })
        }
        SynthKind::DegeneratePair => {
            if h * w < 2 {
                return Err(SynthError::InvalidParameters("degenerate pair needs at least two pixels".into()));
            }
            let tl = normalize_flat(h, w, &vec![rng.gen_range(0.0..1.0); h * w])?;
            let ft = random_map(h, w, &mut rng)?;
            Ok(SynthPair {
                tl,
                ft,
                expected: ExpectedDrift {
                    overlap_iou: Some(0.0),
                    flags: [DriftFlag::TlDegenerate, DriftFlag::EmptyTlMask, DriftFlag::ConstantCorr].into(),
                    ..Default::default()
                },
            })
        }
    }
}

/// Random map with at least one pixel at each end of the range.
fn random_map(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<AttributionMap, SynthError> {
    let mut raw: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    let lo = rng.gen_range(0..raw.len());
    let hi = (lo + 1 + rng.gen_range(0..raw.len() - 1)) % raw.len();
    raw[lo] = -1.0;
    raw[hi] = 2.0;
    Ok(normalize_flat(h, w, &raw)?)
}

fn translated_blob(
    spec: &SynthSpec,
    center: (f64, f64),
    sigma: f64,
    offset: (i64, i64),
    rng: &mut ChaCha8Rng,
) -> Result<SynthPair, SynthError> {
    if !(sigma.is_finite() && sigma > 0.0) || !center.0.is_finite() || !center.1.is_finite() {
        return Err(SynthError::InvalidParameters(format!("sigma {sigma} / center {center:?}")));
    }
    let (h, w) = (spec.height as i64, spec.width as i64);
    let radius = blob_radius(sigma) as i64;
    let anchor = (center.0.round() as i64, center.1.round() as i64);
    let frac = (center.0 - anchor.0 as f64, center.1 - anchor.1 as f64);
    let inside = |(r, c): (i64, i64)| r - radius >= 0 && r + radius < h && c - radius >= 0 && c + radius < w;
    if !inside(anchor) {
        return Err(SynthError::ClippedSupport { what: "TL blob", height: spec.height, width: spec.width });
    }
    let moved = (anchor.0 + offset.0, anchor.1 + offset.1);
    if !inside(moved) {
        return Err(SynthError::ClippedSupport { what: "FT blob", height: spec.height, width: spec.width });
    }

    let side = (2 * radius + 1) as usize;
    let patch: Vec<f64> = (0..side * side)
        .map(|k| {
            let dr = (k / side) as f64 - radius as f64 - frac.0;
            let dc = (k % side) as f64 - radius as f64 - frac.1;
            let g = (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp();
            g * rng.gen_range(0.8..1.2)
        })
        .collect();

    let place = |at: (i64, i64)| {
        let mut raw = vec![0.0; (h * w) as usize];
        for (k, &v) in patch.iter().enumerate() {
            let r = at.0 - radius + (k / side) as i64;
            let c = at.1 - radius + (k % side) as i64;
            raw[(r * w + c) as usize] = v;
        }
        normalize_flat(spec.height, spec.width, &raw)
    };
    let tl = place(anchor)?;
    let ft = place(moved)?;

    // Discrete centroid summed over the patch only, in patch-local coordinates.
    let (mut mass, mut mr, mut mc) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..side * side {
        let r = anchor.0 - radius + (k / side) as i64;
        let c = anchor.1 - radius + (k % side) as i64;
        let v = f64::from(tl.get(r as usize, c as usize));
        mass += v;
        mr += (k / side) as f64 * v;
        mc += (k % side) as f64 * v;
    }
    let tl_centroid = Centroid {
        row: (anchor.0 - radius) as f64 + mr / mass,
        col: (anchor.1 - radius) as f64 + mc / mass,
    };
    let shift = (offset.0 as f64).hypot(offset.1 as f64);
    Ok(SynthPair {
        tl,
        ft,
        expected: ExpectedDrift {
            spatial_displacement: Some(shift / (spec.height as f64).hypot(spec.width as f64)),
            concentration_change: Some(0.0),
            tl_centroid: Some(tl_centroid),
            ..Default::default()
        },
    })
}

/// Parameters for an on-disk synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n: usize,
    pub classes: Vec<String>,
    pub architectures: Vec<String>,
    pub methods: Vec<String>,
    /// Fraction of samples given one wrong prediction.
    pub misclassified_fraction: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub tl_epoch: u32,
    pub ft_epoch: u32,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n: 24,
            classes: vec!["class_a".into(), "class_b".into()],
            architectures: vec!["arch_a".into(), "arch_b".into()],
            methods: vec!["method_a".into(), "method_b".into()],
            misclassified_fraction: 0.2,
            height: 12,
            width: 12,
            seed: 0,
            tl_epoch: 8,
            ft_epoch: 19,
        }
    }
}

/// One expected per-sample record in the sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRecord {
    pub sample_id: String,
    pub architecture: String,
    pub method: String,
    pub spatial_displacement: Option<f64>,
    pub overlap_iou: Option<f64>,
    pub pattern_correlation: Option<f64>,
    pub concentration_change: Option<f64>,
    pub flags: BTreeSet<DriftFlag>,
}

impl ExpectedRecord {
    /// As a drift record; an unpredicted concentration change becomes 0, which
    /// only happens for degenerate pairs that aggregation ignores.
    pub fn to_record(&self) -> DriftRecord {
        DriftRecord {
            sample_id: self.sample_id.clone(),
            architecture: self.architecture.clone(),
            method: self.method.clone(),
            spatial_displacement: self.spatial_displacement,
            overlap_iou: self.overlap_iou,
            pattern_correlation: self.pattern_correlation,
            concentration_change: self.concentration_change.unwrap_or(0.0),
            flags: self.flags.clone(),
        }
    }
}

/// Sidecar of expected metrics written beside a synthetic manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    pub schema_version: u32,
    /// Samples planted with a wrong prediction.
    pub misclassified: Vec<String>,
    pub records: Vec<ExpectedRecord>,
}

impl Expectations {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path)
            .map_err(|source| IoError::IoFailure { path: path.display().to_string(), source })?;
        serde_json::from_str(&text)
            .map_err(|e| IoError::SchemaViolation { pointer: "/".into(), message: e.to_string() })
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub manifest_path: PathBuf,
    pub expectations_path: PathBuf,
    pub manifest: CohortManifest,
    pub expectations: Expectations,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EXPECTATIONS_FILE: &str = "expected.json";

/// Writes a synthetic cohort into `dir`: manifest, map files and sidecar.
///
/// Samples are assigned to classes round-robin. Every map pair is a uniform
/// rectangle pair (all four metrics in closed form), except for occasional
/// identical and degenerate pairs.
pub fn generate_cohort(spec: &CohortSpec, dir: &Path) -> Result<GeneratedCohort, SynthError> {
    if spec.n == 0 {
        return Err(SynthError::InvalidParameters("cohort size must be at least 1".into()));
    }
    if spec.classes.is_empty() || spec.architectures.is_empty() || spec.methods.is_empty() {
        return Err(SynthError::InvalidParameters("classes, architectures and methods must be nonempty".into()));
    }
    if spec.n < spec.classes.len() {
        return Err(SynthError::InvalidParameters("every class needs at least one sample".into()));
    }
    if !(0.0..=1.0).contains(&spec.misclassified_fraction) {
        return Err(SynthError::InvalidParameters("misclassified fraction must lie in [0, 1]".into()));
    }
    if spec.height < 2 || spec.width < 2 {
        return Err(SynthError::InvalidParameters("grid sides must be at least 2".into()));
    }
    let planted_count = (spec.misclassified_fraction * spec.n as f64).round() as usize;
    if planted_count > 0 && spec.classes.len() < 2 {
        return Err(SynthError::InvalidParameters("misclassification needs at least two classes".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.classes.len();
    let planted: BTreeSet<usize> = sample_indices(&mut rng, spec.n, planted_count).into_iter().collect();

    let mut samples = Vec::with_capacity(spec.n);
    let mut records = Vec::new();
    let mut misclassified = Vec::new();
    for idx in 0..spec.n {
        let id = format!("s{idx:05}");
        let true_class = idx % k;
        let mut predictions: BTreeMap<String, PhasePair<usize>> = spec
            .architectures
            .iter()
            .map(|a| (a.clone(), PhasePair { tl: true_class, ft: true_class }))
            .collect();
        if planted.contains(&idx) {
            let arch = &spec.architectures[rng.gen_range(0..spec.architectures.len())];
            let wrong = (true_class + rng.gen_range(1..k)) % k;
            let pair = predictions.get_mut(arch).unwrap();
            if rng.gen_bool(0.5) {
                pair.tl = wrong;
            } else {
                pair.ft = wrong;
            }
            misclassified.push(id.clone());
        }

        let mut maps = BTreeMap::new();
        for arch in &spec.architectures {
            let mut by_method = BTreeMap::new();
            for method in &spec.methods {
                let pair_spec = match rng.gen_range(0..16) {
                    0 => SynthSpec { kind: SynthKind::Identical, height: spec.height, width: spec.width, seed: rng.gen() },
                    1 => SynthSpec {
                        kind: SynthKind::DegeneratePair,
                        height: spec.height,
                        width: spec.width,
                        seed: rng.gen(),
                    },
                    _ => SynthSpec::random_mass_spread(spec.height, spec.width, &mut rng),
                };
                let pair = generate(&pair_spec)?;
                let refs = PhasePair {
                    tl: conventional_map_path(arch, method, Phase::Tl, &id),
                    ft: conventional_map_path(arch, method, Phase::Ft, &id),
                };
                write_map(&pair.tl, &dir.join(&refs.tl))?;
                write_map(&pair.ft, &dir.join(&refs.ft))?;
                by_method.insert(method.clone(), refs);
                let e = pair.expected;
                records.push(ExpectedRecord {
                    sample_id: id.clone(),
                    architecture: arch.clone(),
                    method: method.clone(),
                    spatial_displacement: e.spatial_displacement,
                    overlap_iou: e.overlap_iou,
                    pattern_correlation: e.pattern_correlation,
                    concentration_change: e.concentration_change,
                    flags: e.flags,
                });
            }
            maps.insert(arch.clone(), by_method);
        }
        samples.push(SampleRecord { id, true_class, predictions, maps });
    }

    let classes = spec
        .classes
        .iter()
        .enumerate()
        .map(|(c, name)| ClassInfo { name: name.clone(), test_count: ((spec.n - c).div_ceil(k)) as u64 })
        .collect();
    let manifest = CohortManifest {
        schema_version: SCHEMA_VERSION,
        classes,
        architectures: spec.architectures.clone(),
        methods: spec.methods.clone(),
        phases: vec![
            PhaseInfo { role: Phase::Tl, epoch: spec.tl_epoch },
            PhaseInfo { role: Phase::Ft, epoch: spec.ft_epoch },
        ],
        layers: BTreeMap::new(),
        samples,
        base_dir: dir.to_path_buf(),
    };
    manifest.validate()?;
    let manifest_path = dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;

    let expectations = Expectations { schema_version: SCHEMA_VERSION, misclassified, records };
    let expectations_path = dir.join(EXPECTATIONS_FILE);
    let mut text = serde_json::to_string_pretty(&expectations).expect("expectations serialize");
    text.push('\n');
    fs::write(&expectations_path, text)
        .map_err(|source| IoError::IoFailure { path: expectations_path.display().to_string(), source })?;

    Ok(GeneratedCohort { manifest_path, expectations_path, manifest, expectations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{binarize, center_of_mass};
    use crate::metrics::{drift, RecordIds};

    const IDS: RecordIds<'static> = RecordIds { sample_id: "s", architecture: "a", method: "m" };

    fn spec(kind: SynthKind, h: usize, w: usize) -> SynthSpec {
        SynthSpec { kind, height: h, width: w, seed: 7 }
    }

    #[test]
    fn identical_is_fixed_point() {
        for (h, w) in [(2, 1), (5, 7), (32, 16)] {
            let p = generate(&spec(SynthKind::Identical, h, w)).unwrap();
            let r = drift(&p.tl, &p.ft, 0.2, IDS).unwrap();
            assert_eq!(r.spatial_displacement, Some(0.0));
            assert_eq!(r.overlap_iou, Some(1.0));
            assert!((r.pattern_correlation.unwrap() - 1.0).abs() < 1e-12);
            assert_eq!(r.concentration_change, 0.0);
        }
    }

    #[test]
    fn translated_blob_64() {
        let s = spec(SynthKind::TranslatedBlob { center: (20.3, 30.6), sigma: 2.5, offset: (3, 4) }, 64, 64);
        let p = generate(&s).unwrap();
        let expected = 5.0 / (64.0 * 2f64.sqrt());
        assert!((p.expected.spatial_displacement.unwrap() - expected).abs() < 1e-15);
        let r = drift(&p.tl, &p.ft, 0.2, IDS).unwrap();
        assert!((r.spatial_displacement.unwrap() - expected).abs() < 1e-6);
        assert!(r.concentration_change.abs() < 1e-9);
        let c = center_of_mass(&p.tl).unwrap();
        let e = p.expected.tl_centroid.unwrap();
        assert!((c.row - e.row).abs() < 1e-9 && (c.col - e.col).abs() < 1e-9);
    }

    #[test]
    fn translated_blob_clipping() {
        let s = spec(SynthKind::TranslatedBlob { center: (2.0, 30.0), sigma: 2.0, offset: (0, 0) }, 64, 64);
        assert!(matches!(generate(&s), Err(SynthError::ClippedSupport { .. })));
        let s = spec(SynthKind::TranslatedBlob { center: (30.0, 30.0), sigma: 2.0, offset: (30, 0) }, 64, 64);
        assert!(matches!(generate(&s), Err(SynthError::ClippedSupport { what: "FT blob", .. })));
    }

    #[test]
    fn mask_overlap_strip() {
        let s = spec(SynthKind::MaskOverlap { tl: Rect::new(0, 0, 10, 10), ft: Rect::new(0, 5, 10, 10) }, 20, 20);
        let p = generate(&s).unwrap();
        assert_eq!(p.expected.overlap_iou, Some(50.0 / 150.0));
        let r = drift(&p.tl, &p.ft, 0.2, IDS).unwrap();
        assert_eq!(r.overlap_iou, Some(1.0 / 3.0));
    }

    #[test]
    fn mask_overlap_rejects_bad_rects() {
        let s = spec(SynthKind::MaskOverlap { tl: Rect::new(15, 0, 10, 10), ft: Rect::new(0, 0, 2, 2) }, 20, 20);
        assert!(matches!(generate(&s), Err(SynthError::ClippedSupport { what: "TL", .. })));
        let s = spec(SynthKind::MaskOverlap { tl: Rect::new(0, 0, 20, 20), ft: Rect::new(0, 0, 2, 2) }, 20, 20);
        assert!(matches!(generate(&s), Err(SynthError::InvalidParameters(_))));
    }

    #[test]
    fn mass_spread_all_metrics_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = SynthSpec::random_mass_spread(9, 13, &mut rng);
            let p = generate(&s).unwrap();
            let r = drift(&p.tl, &p.ft, 0.2, IDS).unwrap();
            let e = &p.expected;
            assert!((r.spatial_displacement.unwrap() - e.spatial_displacement.unwrap()).abs() < 1e-12);
            assert_eq!(r.overlap_iou, e.overlap_iou);
            assert!((r.concentration_change - e.concentration_change.unwrap()).abs() < 1e-12);
            match r.pattern_correlation {
                Some(c) => assert!((c - e.pattern_correlation.unwrap()).abs() < 1e-12),
                None => panic!("uniform rectangles are never constant"),
            }
        }
    }

    #[test]
    fn degenerate_pair_flags() {
        let p = generate(&spec(SynthKind::DegeneratePair, 6, 6)).unwrap();
        let r = drift(&p.tl, &p.ft, 0.2, IDS).unwrap();
        assert!(p.expected.flags.is_subset(&r.flags));
        assert_eq!(r.spatial_displacement, None);
        assert_eq!(r.overlap_iou, Some(0.0));
        assert!(binarize(&p.tl, 0.2).unwrap().is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SynthSpec::random_translated_blob(32, 32, &mut ChaCha8Rng::seed_from_u64(11));
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.tl, b.tl);
        assert_eq!(a.ft, b.ft);
    }

    #[test]
    fn cohort_rejects_empty() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CohortSpec { n: 0, ..Default::default() };
        assert!(matches!(generate_cohort(&spec, dir.path()), Err(SynthError::InvalidParameters(_))));
    }

    #[test]
    fn cohort_plants_misclassifications() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CohortSpec { n: 10, misclassified_fraction: 0.2, ..Default::default() };
        let g = generate_cohort(&spec, dir.path()).unwrap();
        assert_eq!(g.expectations.misclassified.len(), 2);
        let kept = crate::cohort::filter_true_positive(&g.manifest).unwrap();
        assert_eq!(kept.len(), 8);
        assert!(kept.iter().all(|id| !g.expectations.misclassified.contains(id)));
        assert_eq!(g.manifest.class_counts(), vec![5, 5]);
    }
}
