#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use semdrift::io::{conventional_map_path, ClassInfo, CohortManifest, Phase, PhaseInfo, PhasePair, SampleRecord};
use semdrift::metrics::DriftRecord;
use semdrift::synth::{generate, Rect, SynthKind, SynthSpec};
use semdrift::write_map;

pub const LAYERCAM: &str = "LayerCAM";
pub const GRADCAM_PP: &str = "Grad-CAM++";
pub const DENSENET: &str = "DenseNet201";
pub const RESNET: &str = "ResNet50V2";
pub const INCEPTION: &str = "InceptionV3";

pub const FIXTURE_SAMPLES: usize = 20;

/// (method, architecture, [(mean, std); 4]) in the column order
/// displacement, IoU, correlation, concentration change.
pub type Row = (&'static str, &'static str, [(f64, f64); 4]);

pub fn drift_table() -> Vec<Row> {
    vec![
        (LAYERCAM, DENSENET, [(0.096, 0.074), (0.699, 0.171), (0.368, 0.337), (-0.050, 0.136)]),
        (LAYERCAM, RESNET, [(0.101, 0.062), (0.519, 0.154), (0.403, 0.285), (-0.136, 0.130)]),
        (LAYERCAM, INCEPTION, [(0.090, 0.058), (0.777, 0.128), (0.220, 0.465), (-0.024, 0.077)]),
        (GRADCAM_PP, DENSENET, [(0.100, 0.073), (0.690, 0.169), (0.345, 0.350), (-0.049, 0.172)]),
        (GRADCAM_PP, RESNET, [(0.138, 0.085), (0.383, 0.174), (0.506, 0.246), (-0.516, 0.516)]),
        (GRADCAM_PP, INCEPTION, [(0.136, 0.073), (0.643, 0.172), (0.386, 0.423), (0.275, 0.303)]),
    ]
}

pub fn fixture_architectures() -> Vec<String> {
    vec![DENSENET.into(), RESNET.into(), INCEPTION.into()]
}

pub fn fixture_methods() -> Vec<String> {
    vec![LAYERCAM.into(), GRADCAM_PP.into()]
}

/// Exact two-point realization of (mean, std) over `FIXTURE_SAMPLES`
/// equal-weight samples: `k` samples at the high value, the rest at the low
/// value, with `k` chosen so both values fall inside `range`.
pub fn two_point(mean: f64, std: f64, range: (f64, f64)) -> Vec<f64> {
    let n = FIXTURE_SAMPLES;
    for k in [10, 5, 15, 4, 16, 2, 18, 1, 19] {
        let p = k as f64 / n as f64;
        let lo = mean - std * (p / (1.0 - p)).sqrt();
        let hi = mean + std * ((1.0 - p) / p).sqrt();
        if lo >= range.0 && hi <= range.1 {
            return (0..n).map(|i| if i < k { hi } else { lo }).collect();
        }
    }
    panic!("no two-point realization for {mean} ± {std}");
}

pub fn fixture_class(sample_id: &str) -> Option<usize> {
    let idx: usize = sample_id.strip_prefix('t')?.parse().ok()?;
    Some(idx % 2)
}

/// Drift records whose weighted statistics equal the table entries.
pub fn drift_table_records() -> Vec<DriftRecord> {
    let ranges = [(0.0, 1.0), (0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)];
    let mut out = Vec::new();
    for (method, arch, stats) in drift_table() {
        let cols: Vec<Vec<f64>> = stats.iter().zip(ranges).map(|(&(m, s), r)| two_point(m, s, r)).collect();
        let rows = cols[0].iter().zip(&cols[1]).zip(&cols[2]).zip(&cols[3]);
        for (i, (((&disp, &iou), &corr), &conc)) in rows.enumerate() {
            out.push(DriftRecord {
                sample_id: format!("t{i:03}"),
                architecture: arch.into(),
                method: method.into(),
                spatial_displacement: Some(disp),
                overlap_iou: Some(iou),
                pattern_correlation: Some(corr),
                concentration_change: conc,
                flags: BTreeSet::new(),
            });
        }
    }
    out
}

/// Writes an on-disk cohort whose IoU is per-class constant (mean − std for
/// class 0, mean + std for class 1) for every table entry, using 1×1001
/// strip maps so IoU is an exact thousandth.
pub fn write_drift_table_cohort(dir: &Path, per_class: usize) -> PathBuf {
    let table = drift_table();
    let n = 2 * per_class;
    let mut samples = Vec::new();
    for idx in 0..n {
        let id = format!("t{idx:03}");
        let class = idx % 2;
        let mut predictions = BTreeMap::new();
        let mut maps: BTreeMap<String, BTreeMap<String, PhasePair<String>>> = BTreeMap::new();
        for arch in fixture_architectures() {
            predictions.insert(arch.clone(), PhasePair { tl: class, ft: class });
        }
        for (method, arch, stats) in &table {
            let (m, s) = stats[1];
            let iou = if class == 0 { m - s } else { m + s };
            let inter = (iou * 1000.0).round() as usize;
            let spec = SynthSpec {
                kind: SynthKind::MassSpread { tl: Rect::new(0, 0, 1, 1000), ft: Rect::new(0, 0, 1, inter) },
                height: 1,
                width: 1001,
                seed: 0,
            };
            let pair = generate(&spec).unwrap();
            let refs = PhasePair {
                tl: conventional_map_path(arch, method, Phase::Tl, &id),
                ft: conventional_map_path(arch, method, Phase::Ft, &id),
            };
            write_map(&pair.tl, &dir.join(&refs.tl)).unwrap();
            write_map(&pair.ft, &dir.join(&refs.ft)).unwrap();
            maps.entry(arch.to_string()).or_default().insert(method.to_string(), refs);
        }
        samples.push(SampleRecord { id, true_class: class, predictions, maps });
    }
    let manifest = CohortManifest {
        schema_version: 1,
        classes: vec![
            ClassInfo { name: "first".into(), test_count: per_class as u64 },
            ClassInfo { name: "second".into(), test_count: per_class as u64 },
        ],
        architectures: fixture_architectures(),
        methods: fixture_methods(),
        phases: vec![PhaseInfo { role: Phase::Tl, epoch: 8 }, PhaseInfo { role: Phase::Ft, epoch: 19 }],
        layers: [
            (DENSENET.to_string(), "conv5_block32_concat".to_string()),
            (RESNET.to_string(), "conv5_block3_out".to_string()),
            (INCEPTION.to_string(), "mixed10".to_string()),
        ]
        .into(),
        samples,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    manifest.write(&path).unwrap();
    path
}

/// Writes a manifest with the given class counts and a single sample whose
/// maps are not written.
pub fn write_counts_manifest(dir: &Path, counts: &[(&str, u64)]) -> PathBuf {
    let classes: Vec<String> = counts
        .iter()
        .map(|(name, n)| format!(r#"{{"name":"{name}","test_count":{n}}}"#))
        .collect();
    let text = format!(
        r#"{{"schema_version":1,"classes":[{}],"architectures":["A"],"methods":["M"],
            "phases":[{{"role":"TL","epoch":8}},{{"role":"FT","epoch":19}}],
            "samples":[{{"id":"s0","true_class":0,"predictions":{{"A":{{"TL":0,"FT":0}}}},
                         "maps":{{"A":{{"M":{{"TL":"tl.adm","FT":"ft.adm"}}}}}}}}]}}"#,
        classes.join(",")
    );
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).unwrap();
    path
}
