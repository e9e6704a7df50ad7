//! Drift report assembly: weighted per-(architecture, method) tables,
//! IoU-based stability rankings, cross-method ranking reversals, and
//! rendering to json / csv / markdown.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{aggregate, ClassWeights, CohortError, WeightedStat};
use crate::metrics::DriftRecord;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records for architecture {architecture:?} under method {method:?}")]
    IncompleteCoverage { architecture: String, method: String },
    #[error("cross-method sensitivity needs at least two methods")]
    SingleMethod,
    #[error("unsupported output format {0:?} (expected json, csv or markdown)")]
    UnsupportedFormat(String),
    #[error("unknown {kind} {name:?}")]
    UnknownIdentifier { kind: &'static str, name: String },
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("serialization failed: {0}")]
    Serialization(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub total: usize,
    pub retained: usize,
    pub retention_pct: f64,
}

impl CohortSummary {
    pub fn new(total: usize, retained: usize) -> Self {
        let retention_pct = if total == 0 { 0.0 } else { 100.0 * retained as f64 / total as f64 };
        Self { total, retained, retention_pct }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub architecture: String,
    pub method: String,
    pub spatial_displacement: WeightedStat,
    pub overlap_iou: WeightedStat,
    pub pattern_correlation: WeightedStat,
    pub concentration_change: WeightedStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedArchitecture {
    pub architecture: String,
    pub mean_iou: f64,
}

/// Architectures ordered by mean overlap IoU, most stable first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRanking {
    pub method: String,
    pub order: Vec<RankedArchitecture>,
    /// Set when two adjacent architectures share a mean and the order fell
    /// back to the identifier tie-break.
    pub tie_broken: bool,
}

impl MethodRanking {
    pub fn architectures(&self) -> Vec<&str> {
        self.order.iter().map(|r| r.architecture.as_str()).collect()
    }
}

/// Two methods whose rankings differ; positions are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reversal {
    pub method_a: String,
    pub method_b: String,
    pub changed_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDelta {
    pub architecture: String,
    /// Largest |mean IoU difference| over method pairs.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub threshold: f64,
    pub cohort: CohortSummary,
    pub architectures: Vec<String>,
    pub methods: Vec<String>,
    pub class_names: Vec<String>,
    pub class_weights: Vec<f64>,
    /// Method-major, in declared order.
    pub entries: Vec<ReportEntry>,
    pub rankings: Vec<MethodRanking>,
    pub reversals: Vec<Reversal>,
    pub cross_method_delta: Vec<ArchitectureDelta>,
}

/// Everything the report needs beyond the records themselves.
#[derive(Debug, Clone)]
pub struct ReportContext<'a> {
    pub architectures: &'a [String],
    pub methods: &'a [String],
    pub class_names: &'a [String],
    pub threshold: f64,
    pub cohort: CohortSummary,
}

pub fn build_report<F>(
    ctx: &ReportContext<'_>,
    records: &[DriftRecord],
    weights: &ClassWeights,
    class_of: F,
) -> Result<DriftReport, ReportError>
where
    F: Fn(&str) -> Option<usize> + Copy,
{
    let mut entries = Vec::with_capacity(ctx.methods.len() * ctx.architectures.len());
    for method in ctx.methods {
        for arch in ctx.architectures {
            let subset: Vec<DriftRecord> = records
                .iter()
                .filter(|r| &r.architecture == arch && &r.method == method)
                .cloned()
                .collect();
            if subset.is_empty() {
                return Err(ReportError::IncompleteCoverage { architecture: arch.clone(), method: method.clone() });
            }
            let s = aggregate(&subset, weights, class_of)?;
            entries.push(ReportEntry {
                architecture: arch.clone(),
                method: method.clone(),
                spatial_displacement: s.spatial_displacement,
                overlap_iou: s.overlap_iou,
                pattern_correlation: s.pattern_correlation,
                concentration_change: s.concentration_change,
            });
        }
    }
    let class_weights = (0..ctx.class_names.len()).map(|c| weights.get(c).unwrap_or(0.0)).collect();
    let mut report = DriftReport {
        threshold: ctx.threshold,
        cohort: ctx.cohort.clone(),
        architectures: ctx.architectures.to_vec(),
        methods: ctx.methods.to_vec(),
        class_names: ctx.class_names.to_vec(),
        class_weights,
        entries,
        rankings: Vec::new(),
        reversals: Vec::new(),
        cross_method_delta: Vec::new(),
    };
    report.recompute_derived();
    Ok(report)
}

/// Orders `(architecture, mean)` pairs by descending mean, ties by identifier.
pub fn rank(method: &str, means: &[(String, f64)]) -> MethodRanking {
    let mut order: Vec<RankedArchitecture> = means
        .iter()
        .map(|(a, m)| RankedArchitecture { architecture: a.clone(), mean_iou: *m })
        .collect();
    order.sort_by(|x, y| {
        y.mean_iou
            .partial_cmp(&x.mean_iou)
            .unwrap_or(Ordering::Equal)
            .then_with(|| x.architecture.cmp(&y.architecture))
    });
    let tie_broken = order.windows(2).any(|w| w[0].mean_iou == w[1].mean_iou);
    MethodRanking { method: method.to_owned(), order, tie_broken }
}

/// Pairs of rankings that differ, with the positions where they differ.
pub fn detect_reversals(rankings: &[MethodRanking]) -> Vec<Reversal> {
    let mut out = Vec::new();
    for (i, a) in rankings.iter().enumerate() {
        for b in &rankings[i + 1..] {
            let (first, second) = if a.method <= b.method { (a, b) } else { (b, a) };
            let changed: Vec<usize> = first
                .architectures()
                .iter()
                .zip(second.architectures())
                .enumerate()
                .filter(|(_, (x, y))| *x != y)
                .map(|(k, _)| k + 1)
                .collect();
            if !changed.is_empty() {
                out.push(Reversal {
                    method_a: first.method.clone(),
                    method_b: second.method.clone(),
                    changed_positions: changed,
                });
            }
        }
    }
    out.sort_by(|x, y| (&x.method_a, &x.method_b).cmp(&(&y.method_a, &y.method_b)));
    out
}

impl DriftReport {
    pub fn entry(&self, architecture: &str, method: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.architecture == architecture && e.method == method)
    }

    pub fn ranking(&self, method: &str) -> Option<&MethodRanking> {
        self.rankings.iter().find(|r| r.method == method)
    }

    pub fn has_reversal(&self) -> bool {
        !self.reversals.is_empty()
    }

    fn recompute_derived(&mut self) {
        self.rankings = self
            .methods
            .iter()
            .map(|m| {
                let means: Vec<(String, f64)> = self
                    .architectures
                    .iter()
                    .filter_map(|a| self.entry(a, m).map(|e| (a.clone(), e.overlap_iou.mean)))
                    .collect();
                rank(m, &means)
            })
            .collect();
        self.reversals = detect_reversals(&self.rankings);
        self.cross_method_delta = cross_method_sensitivity(self).unwrap_or_default();
    }

    /// Restricts the report to a subset of architectures and methods and
    /// recomputes rankings, reversals and cross-method deltas.
    pub fn restrict(&self, architectures: &[String], methods: &[String]) -> Result<DriftReport, ReportError> {
        for a in architectures {
            if !self.architectures.contains(a) {
                return Err(ReportError::UnknownIdentifier { kind: "architecture", name: a.clone() });
            }
        }
        for m in methods {
            if !self.methods.contains(m) {
                return Err(ReportError::UnknownIdentifier { kind: "method", name: m.clone() });
            }
        }
        let keep_arch: Vec<String> = self.architectures.iter().filter(|a| architectures.contains(a)).cloned().collect();
        let keep_method: Vec<String> = self.methods.iter().filter(|m| methods.contains(m)).cloned().collect();
        let mut out = self.clone();
        out.entries.retain(|e| keep_arch.contains(&e.architecture) && keep_method.contains(&e.method));
        out.architectures = keep_arch;
        out.methods = keep_method;
        out.recompute_derived();
        Ok(out)
    }
}

/// Per architecture, the largest |mean IoU difference| over all method pairs.
pub fn cross_method_sensitivity(report: &DriftReport) -> Result<Vec<ArchitectureDelta>, ReportError> {
    if report.methods.len() < 2 {
        return Err(ReportError::SingleMethod);
    }
    let mut out = Vec::with_capacity(report.architectures.len());
    for arch in &report.architectures {
        let means: Vec<f64> =
            report.methods.iter().filter_map(|m| report.entry(arch, m)).map(|e| e.overlap_iou.mean).collect();
        let delta = match (means.iter().copied().reduce(f64::max), means.iter().copied().reduce(f64::min)) {
            (Some(hi), Some(lo)) => hi - lo,
            _ => 0.0,
        };
        out.push(ArchitectureDelta { architecture: arch.clone(), delta });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            _ => Err(ReportError::UnsupportedFormat(s.to_owned())),
        }
    }
}

pub fn render(report: &DriftReport, format: Format) -> Result<String, ReportError> {
    match format {
        Format::Json => {
            let mut s =
                serde_json::to_string_pretty(report).map_err(|e| ReportError::Serialization(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => render_csv(report),
        Format::Markdown => Ok(render_markdown(report)),
    }
}

pub fn parse_json(text: &str) -> Result<DriftReport, ReportError> {
    serde_json::from_str(text).map_err(|e| ReportError::Serialization(e.to_string()))
}

const METRIC_COLUMNS: [&str; 4] = ["spatial_displacement", "overlap_iou", "pattern_correlation", "concentration_change"];

fn entry_stats(e: &ReportEntry) -> [&WeightedStat; 4] {
    [&e.spatial_displacement, &e.overlap_iou, &e.pattern_correlation, &e.concentration_change]
}

fn render_csv(report: &DriftReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| ReportError::Serialization(e.to_string());
    w.write_record(["method", "architecture", "metric", "mean", "std", "defined_count", "undefined_count"])
        .map_err(ser)?;
    for e in &report.entries {
        for (name, stat) in METRIC_COLUMNS.iter().zip(entry_stats(e)) {
            w.write_record([
                e.method.as_str(),
                e.architecture.as_str(),
                name,
                &stat.mean.to_string(),
                &stat.std.to_string(),
                &stat.defined_count.to_string(),
                &stat.undefined_count.to_string(),
            ])
            .map_err(ser)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Serialization(e.to_string()))
}

fn signed(v: f64, signed: bool) -> String {
    // avoid rendering "-0.000"
    let v = if format!("{v:.3}").parse::<f64>() == Ok(0.0) { 0.0 } else { v };
    if signed && v > 0.0 {
        format!("+{v:.3}")
    } else {
        format!("{v:.3}")
    }
}

fn render_markdown(report: &DriftReport) -> String {
    let mut s = String::new();
    let c = &report.cohort;
    let _ = writeln!(s, "# Drift report\n");
    let _ = writeln!(
        s,
        "Cohort: {} samples, {} retained ({:.1}%). Threshold: {}.\n",
        c.total, c.retained, c.retention_pct, report.threshold
    );
    let _ = writeln!(s, "| Method | Architecture | Spatial Disp | Overlap IoU | Pattern Corr | Conc Change |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for e in &report.entries {
        let cells: Vec<String> = entry_stats(e)
            .iter()
            .enumerate()
            .map(|(k, st)| format!("{} ± {:.3}", signed(st.mean, k == 3), st.std))
            .collect();
        let _ = writeln!(s, "| {} | {} | {} |", e.method, e.architecture, cells.join(" | "));
    }

    let undefined: Vec<String> = report
        .entries
        .iter()
        .flat_map(|e| {
            METRIC_COLUMNS.iter().zip(entry_stats(e)).filter(|(_, st)| st.undefined_count > 0).map(move |(n, st)| {
                format!("- {} / {}: {} undefined {}", e.method, e.architecture, st.undefined_count, n)
            })
        })
        .collect();
    if !undefined.is_empty() {
        let _ = writeln!(s, "\nUndefined metrics (excluded from aggregation):\n");
        for line in undefined {
            let _ = writeln!(s, "{line}");
        }
    }

    let _ = writeln!(s, "\n## Stability rankings (overlap IoU)\n");
    for r in &report.rankings {
        let order: Vec<String> = r.order.iter().map(|x| format!("{} ({:.3})", x.architecture, x.mean_iou)).collect();
        let tie = if r.tie_broken { " [tie broken by identifier]" } else { "" };
        let _ = writeln!(s, "- {}: {}{}", r.method, order.join(" > "), tie);
    }

    let _ = writeln!(s, "\n## Ranking reversals\n");
    if report.reversals.is_empty() {
        let _ = writeln!(s, "no ranking reversal");
    } else {
        for r in &report.reversals {
            let pos: Vec<String> = r.changed_positions.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "- {} vs {}: positions {} differ", r.method_a, r.method_b, pos.join(", "));
        }
    }

    if !report.cross_method_delta.is_empty() {
        let _ = writeln!(s, "\n## Cross-method IoU sensitivity\n");
        for d in &report.cross_method_delta {
            let _ = writeln!(s, "- {}: {:.3}", d.architecture, d.delta);
        }
    }
    s
}
