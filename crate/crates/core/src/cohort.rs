//! True-positive filtering, inverse-frequency class weights and class-weighted
//! aggregation of drift records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::CohortManifest;
use crate::metrics::DriftRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("sample {sample:?} has no prediction for architecture {architecture:?}")]
    MissingPrediction { sample: String, architecture: String },
    #[error("class {0} has zero count")]
    ZeroCount(usize),
    #[error("no classes given")]
    NoClasses,
    #[error("no defined records for metric {0}")]
    EmptyCohort(&'static str),
    #[error("record for sample {0:?} has no class")]
    UnknownSample(String),
    #[error("class {0} has no weight")]
    MissingWeight(usize),
}

/// Samples correctly classified at both phases by every declared architecture,
/// in manifest order.
pub fn filter_true_positive(manifest: &CohortManifest) -> Result<Vec<String>, CohortError> {
    let mut kept = Vec::new();
    for sample in &manifest.samples {
        let mut correct = true;
        for arch in &manifest.architectures {
            let pred = sample.predictions.get(arch).ok_or_else(|| CohortError::MissingPrediction {
                sample: sample.id.clone(),
                architecture: arch.clone(),
            })?;
            correct &= pred.tl == sample.true_class && pred.ft == sample.true_class;
        }
        if correct {
            kept.push(sample.id.clone());
        }
    }
    Ok(kept)
}

/// Per-class weights proportional to `1 / count`, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(BTreeMap<usize, f64>);

impl ClassWeights {
    pub fn get(&self, class: usize) -> Option<f64> {
        self.0.get(&class).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(&c, &w)| (c, w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.values().sum()
    }

    /// Drops `class` and rescales the rest to sum to one.
    pub fn without(&self, class: usize) -> ClassWeights {
        let mut rest = self.0.clone();
        rest.remove(&class);
        let total: f64 = rest.values().sum();
        rest.values_mut().for_each(|w| *w /= total);
        ClassWeights(rest)
    }
}

pub fn compute_weights(class_counts: &BTreeMap<usize, u64>) -> Result<ClassWeights, CohortError> {
    if class_counts.is_empty() {
        return Err(CohortError::NoClasses);
    }
    if let Some((&class, _)) = class_counts.iter().find(|(_, &n)| n == 0) {
        return Err(CohortError::ZeroCount(class));
    }
    let total: f64 = class_counts.values().map(|&n| 1.0 / n as f64).sum();
    Ok(ClassWeights(class_counts.iter().map(|(&c, &n)| (c, (1.0 / n as f64) / total)).collect()))
}

/// Weights for counts indexed by class position.
pub fn weights_from_counts(counts: &[u64]) -> Result<ClassWeights, CohortError> {
    compute_weights(&counts.iter().copied().enumerate().collect())
}

/// Unweighted spread of one metric within a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub class: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedStat {
    pub mean: f64,
    pub std: f64,
    pub defined_count: usize,
    pub undefined_count: usize,
    #[serde(default)]
    pub per_class: Vec<ClassStat>,
}

/// Class-weighted statistics of a set of `(class, value)` observations where
/// `None` marks an undefined value.
///
/// Each class contributes its own unweighted mean, scaled by its weight; class
/// weights are renormalized over classes that have at least one defined value.
pub fn weighted_stat<I>(observations: I, weights: &ClassWeights, metric: &'static str) -> Result<WeightedStat, CohortError>
where
    I: IntoIterator<Item = (usize, Option<f64>)>,
{
    let mut by_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut undefined_count = 0;
    for (class, value) in observations {
        if weights.get(class).is_none() {
            return Err(CohortError::MissingWeight(class));
        }
        match value {
            Some(v) => by_class.entry(class).or_default().push(v),
            None => undefined_count += 1,
        }
    }
    if by_class.is_empty() {
        return Err(CohortError::EmptyCohort(metric));
    }

    let per_class: Vec<ClassStat> = by_class
        .iter()
        .map(|(&class, values)| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            ClassStat { class, mean, std: var.sqrt(), count: values.len() }
        })
        .collect();

    let present: f64 = per_class.iter().map(|c| weights.get(c.class).unwrap()).sum();
    let mean: f64 = per_class.iter().map(|c| weights.get(c.class).unwrap() / present * c.mean).sum();
    let mut var = 0.0;
    for (class, values) in &by_class {
        let u = weights.get(*class).unwrap() / present / values.len() as f64;
        var += values.iter().map(|v| u * (v - mean).powi(2)).sum::<f64>();
    }
    Ok(WeightedStat {
        mean,
        std: var.max(0.0).sqrt(),
        defined_count: by_class.values().map(Vec::len).sum(),
        undefined_count,
        per_class,
    })
}

/// Aggregated statistics for the four drift metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub spatial_displacement: WeightedStat,
    pub overlap_iou: WeightedStat,
    pub pattern_correlation: WeightedStat,
    pub concentration_change: WeightedStat,
}

/// Class-weighted aggregation of drift records.
///
/// Concentration change is always numerically defined, but records with a
/// degenerate map are excluded from it and counted as undefined.
pub fn aggregate<F>(records: &[DriftRecord], weights: &ClassWeights, class_of: F) -> Result<DriftSummary, CohortError>
where
    F: Fn(&str) -> Option<usize>,
{
    let classes = records
        .iter()
        .map(|r| class_of(&r.sample_id).ok_or_else(|| CohortError::UnknownSample(r.sample_id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let column = |f: fn(&DriftRecord) -> Option<f64>| classes.iter().copied().zip(records.iter().map(f));
    Ok(DriftSummary {
        spatial_displacement: weighted_stat(column(|r| r.spatial_displacement), weights, "spatial_displacement")?,
        overlap_iou: weighted_stat(column(|r| r.overlap_iou), weights, "overlap_iou")?,
        pattern_correlation: weighted_stat(column(|r| r.pattern_correlation), weights, "pattern_correlation")?,
        concentration_change: weighted_stat(
            column(|r| (!r.is_degenerate()).then_some(r.concentration_change)),
            weights,
            "concentration_change",
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::parse_manifest;
    use std::path::Path;

    fn counts(c: &[u64]) -> BTreeMap<usize, u64> {
        c.iter().copied().enumerate().collect()
    }

    #[test]
    fn weights_reproduce_imbalanced_table() {
        let w = compute_weights(&counts(&[317, 855, 141, 839, 1202])).unwrap();
        let expected = [0.235, 0.087, 0.528, 0.089, 0.062];
        for (k, e) in expected.iter().enumerate() {
            assert!((w.get(k).unwrap() - e).abs() <= 1e-3, "class {k}: {}", w.get(k).unwrap());
        }
        assert!((w.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weights_small_cases() {
        let w = compute_weights(&counts(&[5, 5])).unwrap();
        assert_eq!((w.get(0), w.get(1)), (Some(0.5), Some(0.5)));
        let w = compute_weights(&counts(&[1, 3])).unwrap();
        assert!((w.get(0).unwrap() - 0.75).abs() < 1e-15);
        assert!((w.get(1).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(weights_from_counts(&[7]).unwrap().get(0), Some(1.0));
    }

    #[test]
    fn weights_errors() {
        assert_eq!(compute_weights(&counts(&[3, 0])), Err(CohortError::ZeroCount(1)));
        assert_eq!(compute_weights(&BTreeMap::new()), Err(CohortError::NoClasses));
    }

    fn obs(pairs: &[(usize, f64)]) -> Vec<(usize, Option<f64>)> {
        pairs.iter().map(|&(c, v)| (c, Some(v))).collect()
    }

    #[test]
    fn stat_equal_weight_class_means() {
        let w = weights_from_counts(&[10, 10]).unwrap();
        let s = weighted_stat(obs(&[(0, 0.3), (0, 0.5), (1, 0.8)]), &w, "x").unwrap();
        assert!((s.mean - 0.6).abs() < 1e-15);
        assert_eq!(s.defined_count, 3);
    }

    #[test]
    fn stat_unequal_weights() {
        let w = weights_from_counts(&[1, 3]).unwrap();
        let s = weighted_stat(obs(&[(0, 0.0), (1, 1.0)]), &w, "x").unwrap();
        assert!((s.mean - 0.25).abs() < 1e-15);
        // population variance of a 0.75/0.25 two-point distribution
        assert!((s.std - (0.75f64 * 0.25).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stat_constant_values() {
        let w = weights_from_counts(&[2, 9, 4]).unwrap();
        let s = weighted_stat(obs(&[(0, 0.4), (1, 0.4), (2, 0.4), (2, 0.4)]), &w, "x").unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert!(s.std < 1e-15);
    }

    #[test]
    fn stat_counts_undefined_and_errors_when_empty() {
        let w = weights_from_counts(&[1, 1]).unwrap();
        let s = weighted_stat(vec![(0, Some(1.0)), (1, None)], &w, "x").unwrap();
        assert_eq!((s.defined_count, s.undefined_count), (1, 1));
        assert_eq!(s.mean, 1.0);
        assert_eq!(weighted_stat(vec![(0, None)], &w, "x"), Err(CohortError::EmptyCohort("x")));
        assert_eq!(weighted_stat(vec![(5, Some(1.0))], &w, "x"), Err(CohortError::MissingWeight(5)));
    }

    #[test]
    fn removing_a_class_renormalizes() {
        let w = weights_from_counts(&[3, 5, 7]).unwrap();
        let data = obs(&[(0, 0.1), (0, 0.2), (1, 0.9), (2, 0.5), (2, 0.7)]);
        let without: Vec<_> = data.iter().copied().filter(|(c, _)| *c != 1).collect();
        let a = weighted_stat(without.clone(), &w, "x").unwrap();
        let b = weighted_stat(without, &w.without(1), "x").unwrap();
        assert!((a.mean - b.mean).abs() < 1e-15);
        let direct = (w.get(0).unwrap() * 0.15 + w.get(2).unwrap() * 0.6) / (w.get(0).unwrap() + w.get(2).unwrap());
        assert!((a.mean - direct).abs() < 1e-15);
    }

    fn manifest() -> CohortManifest {
        let text = r#"{"schema_version":1,
            "classes":[{"name":"a","test_count":2},{"name":"b","test_count":2}],
            "architectures":["X","Y"], "methods":["M"],
            "phases":[{"role":"TL","epoch":1},{"role":"FT","epoch":2}],
            "samples":[
              {"id":"ok","true_class":0,"predictions":{"X":{"TL":0,"FT":0},"Y":{"TL":0,"FT":0}},
               "maps":{"X":{"M":{"TL":"p","FT":"p"}},"Y":{"M":{"TL":"p","FT":"p"}}}},
              {"id":"bad_tl","true_class":1,"predictions":{"X":{"TL":1,"FT":1},"Y":{"TL":0,"FT":1}},
               "maps":{"X":{"M":{"TL":"p","FT":"p"}},"Y":{"M":{"TL":"p","FT":"p"}}}},
              {"id":"ok2","true_class":1,"predictions":{"X":{"TL":1,"FT":1},"Y":{"TL":1,"FT":1}},
               "maps":{"X":{"M":{"TL":"p","FT":"p"}},"Y":{"M":{"TL":"p","FT":"p"}}}}
            ]}"#;
        parse_manifest(text, Path::new(".")).unwrap()
    }

    #[test]
    fn true_positive_filter() {
        let m = manifest();
        assert_eq!(filter_true_positive(&m).unwrap(), vec!["ok".to_string(), "ok2".to_string()]);
    }

    #[test]
    fn true_positive_missing_prediction() {
        let mut m = manifest();
        m.samples[0].predictions.remove("Y");
        assert!(matches!(filter_true_positive(&m), Err(CohortError::MissingPrediction { .. })));
    }
}
