//! Command-line front end: `audit`, `validate`, `weights`, `synth`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 ranking reversal found with `--fail-on-reversal`.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::cohort::{compute_weights, filter_true_positive, ClassWeights, CohortError};
use crate::io::{load_manifest, read_map, CohortManifest, IoError, MapCheck, Phase};
use crate::maps::DEFAULT_THRESHOLD;
use crate::metrics::{drift, DriftRecord, MetricError, RecordIds};
use crate::report::{build_report, render, CohortSummary, DriftReport, Format, ReportContext, ReportError};
use crate::synth::{generate_cohort, CohortSpec, SynthError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_REVERSAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{context}: {source}")]
    Metric { context: String, source: MetricError },
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Report(ReportError::UnsupportedFormat(_) | ReportError::UnknownIdentifier { .. }) => EXIT_CONFIG,
            CliError::Synth(SynthError::InvalidParameters(_) | SynthError::ClippedSupport { .. }) => EXIT_CONFIG,
            _ => EXIT_DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "semdrift", version, about = "Audit attribution-map drift between two training checkpoints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute weighted drift statistics, rankings and reversals for a cohort.
    Audit(AuditArgs),
    /// Check a manifest and every map file it references.
    Validate(ManifestArg),
    /// Print inverse-frequency class weights from a manifest.
    Weights(WeightsArgs),
    /// Write a synthetic cohort with known expected metrics.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ManifestArg {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Comma-separated subset of methods to report.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Comma-separated subset of architectures to report.
    #[arg(long, value_delimiter = ',')]
    pub archs: Option<Vec<String>>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Recompute class weights from the retained true-positive cohort.
    #[arg(long)]
    pub weights_from_filtered: bool,
    /// Exit with status 3 when any two methods rank architectures differently.
    #[arg(long)]
    pub fail_on_reversal: bool,
    /// Worker threads for per-sample metrics; defaults to available cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "markdown")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for manifest.json, expected.json and maps/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "class_a,class_b")]
    pub classes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "arch_a,arch_b")]
    pub archs: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "method_a,method_b")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 0.2)]
    pub misclassified: f64,
    /// Map size as HEIGHTxWIDTH.
    #[arg(long, default_value = "12x12")]
    pub grid: String,
}

/// Resolved settings for one audit run.
#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub manifest: PathBuf,
    pub threshold: f64,
    pub methods: Option<Vec<String>>,
    pub architectures: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub weights_from_filtered: bool,
    pub fail_on_reversal: bool,
    pub workers: usize,
}

impl AuditConfig {
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            threshold: DEFAULT_THRESHOLD,
            methods: None,
            architectures: None,
            out: None,
            format: Format::Json,
            weights_from_filtered: false,
            fail_on_reversal: false,
            workers: default_workers(),
        }
    }

    fn from_args(args: AuditArgs) -> Result<Self, CliError> {
        let format = args.format.parse::<Format>()?;
        let workers = args.workers.unwrap_or_else(default_workers);
        Ok(Self {
            manifest: args.manifest,
            threshold: args.threshold,
            methods: args.methods,
            architectures: args.archs,
            out: args.out,
            format,
            weights_from_filtered: args.weights_from_filtered,
            fail_on_reversal: args.fail_on_reversal,
            workers,
        })
    }

    fn check(&self) -> Result<(), CliError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CliError::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.workers == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        Ok(())
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn select(declared: &[String], filter: &Option<Vec<String>>, kind: &str) -> Result<Vec<String>, CliError> {
    let Some(filter) = filter else {
        return Ok(declared.to_vec());
    };
    for name in filter {
        if !declared.contains(name) {
            return Err(CliError::Config(format!("{kind} {name:?} is not declared in the manifest")));
        }
    }
    Ok(declared.iter().filter(|d| filter.contains(d)).cloned().collect())
}

/// Weights from the manifest's class counts, or from the retained cohort.
/// Classes with no retained sample are dropped in the latter case.
pub fn cohort_weights(manifest: &CohortManifest, retained: &[String], from_filtered: bool) -> Result<ClassWeights, CliError> {
    let counts = if from_filtered {
        let mut counts = std::collections::BTreeMap::new();
        for id in retained {
            let class = manifest.sample(id).map(|s| s.true_class).expect("retained ids come from the manifest");
            *counts.entry(class).or_insert(0u64) += 1;
        }
        counts
    } else {
        manifest.class_counts().into_iter().enumerate().collect()
    };
    Ok(compute_weights(&counts)?)
}

/// Per-sample drift records for the retained samples, in manifest order.
pub fn compute_records(
    manifest: &CohortManifest,
    retained: &[String],
    architectures: &[String],
    methods: &[String],
    threshold: f64,
    workers: usize,
) -> Result<Vec<DriftRecord>, CliError> {
    let mut jobs = Vec::new();
    for id in retained {
        let sample = manifest.sample(id).expect("retained ids come from the manifest");
        for method in methods {
            for arch in architectures {
                jobs.push((sample, arch.as_str(), method.as_str()));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<DriftRecord, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(sample, arch, method)| {
                let load = |phase: Phase| -> Result<_, CliError> {
                    let rel = sample.map_ref(arch, method, phase).ok_or_else(|| IoError::SchemaViolation {
                        pointer: format!("/samples/{}/maps/{arch}/{method}", sample.id),
                        message: "missing map reference".into(),
                    })?;
                    Ok(read_map(&manifest.resolve(rel))?)
                };
                let tl = load(Phase::Tl)?;
                let ft = load(Phase::Ft)?;
                let ids = RecordIds { sample_id: &sample.id, architecture: arch, method };
                drift(&tl, &ft, threshold, ids).map_err(|source| CliError::Metric {
                    context: format!("sample {:?}, {arch}/{method}", sample.id),
                    source,
                })
            })
            .collect()
    });
    // first error in manifest order, so diagnostics do not depend on scheduling
    results.into_iter().collect()
}

/// Runs the full audit pipeline and returns the report.
pub fn audit(config: &AuditConfig) -> Result<DriftReport, CliError> {
    config.check()?;
    let manifest = load_manifest(&config.manifest, MapCheck::Eager)?;
    let architectures = select(&manifest.architectures, &config.architectures, "architecture")?;
    let methods = select(&manifest.methods, &config.methods, "method")?;

    let retained = filter_true_positive(&manifest)?;
    let weights = cohort_weights(&manifest, &retained, config.weights_from_filtered)?;
    let records = compute_records(&manifest, &retained, &architectures, &methods, config.threshold, config.workers)?;

    let class_of: HashMap<&str, usize> = manifest.samples.iter().map(|s| (s.id.as_str(), s.true_class)).collect();
    let class_names: Vec<String> = manifest.classes.iter().map(|c| c.name.clone()).collect();
    let ctx = ReportContext {
        architectures: &architectures,
        methods: &methods,
        class_names: &class_names,
        threshold: config.threshold,
        cohort: CohortSummary::new(manifest.samples.len(), retained.len()),
    };
    Ok(build_report(&ctx, &records, &weights, |id| class_of.get(id).copied())?)
}

fn cmd_audit(config: &AuditConfig, out: &mut dyn Write) -> Result<i32, CliError> {
    let report = audit(config)?;
    let text = render(&report, config.format)?;
    match &config.out {
        Some(path) => fs::write(path, &text)
            .map_err(|source| IoError::IoFailure { path: path.display().to_string(), source })?,
        None => {
            let _ = out.write_all(text.as_bytes());
        }
    }
    if config.fail_on_reversal && report.has_reversal() {
        return Ok(EXIT_REVERSAL);
    }
    Ok(EXIT_OK)
}

/// Schema checks plus a full read of every referenced map.
pub fn validate(path: &Path) -> Result<usize, CliError> {
    let manifest = load_manifest(path, MapCheck::Eager)?;
    let mut checked = 0;
    for sample in &manifest.samples {
        for (arch, by_method) in &sample.maps {
            for (method, pair) in by_method {
                let tl = read_map(&manifest.resolve(&pair.tl))?;
                let ft = read_map(&manifest.resolve(&pair.ft))?;
                if !tl.same_shape(&ft) {
                    return Err(CliError::Metric {
                        context: format!("sample {:?}, {arch}/{method}", sample.id),
                        source: MetricError::DimensionMismatch {
                            tl_height: tl.height(),
                            tl_width: tl.width(),
                            ft_height: ft.height(),
                            ft_width: ft.width(),
                        },
                    });
                }
                checked += 2;
            }
        }
    }
    Ok(checked)
}

pub fn weights_table(manifest: &CohortManifest, format: Format) -> Result<String, CliError> {
    let counts = manifest.class_counts();
    let weights = compute_weights(&counts.iter().copied().enumerate().collect())?;
    let total: u64 = counts.iter().sum();
    let rows: Vec<(&str, u64, f64, f64)> = manifest
        .classes
        .iter()
        .enumerate()
        .map(|(k, c)| (c.name.as_str(), c.test_count, 100.0 * c.test_count as f64 / total as f64, weights.get(k).unwrap()))
        .collect();
    let mut s = String::new();
    match format {
        Format::Markdown => {
            let _ = writeln!(s, "| Class | Test Samples | % | Weight |");
            let _ = writeln!(s, "|---|---:|---:|---:|");
            for (name, n, pct, w) in &rows {
                let _ = writeln!(s, "| {name} | {n} | {pct:.1} | {w:.3} |");
            }
            let _ = writeln!(s, "| Total | {total} | 100.0 | {:.3} |", weights.sum());
        }
        Format::Csv => {
            let _ = writeln!(s, "class,test_count,percent,weight");
            for (name, n, pct, w) in &rows {
                let _ = writeln!(s, "{name},{n},{pct},{w}");
            }
        }
        Format::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|(name, n, pct, w)| serde_json::json!({"class": name, "test_count": n, "percent": pct, "weight": w}))
                .collect();
            s = serde_json::to_string_pretty(&items).expect("json");
            s.push('\n');
        }
    }
    Ok(s)
}

fn parse_grid(grid: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Config(format!("--grid expects HEIGHTxWIDTH, got {grid:?}"));
    let (h, w) = grid.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Audit(args) => cmd_audit(&AuditConfig::from_args(args)?, out),
        Command::Validate(args) => {
            let n = validate(&args.manifest)?;
            let _ = writeln!(out, "{}: ok ({n} maps checked)", args.manifest.display());
            Ok(EXIT_OK)
        }
        Command::Weights(args) => {
            let format = args.format.parse::<Format>()?;
            let manifest = load_manifest(&args.manifest, MapCheck::Lazy)?;
            let _ = out.write_all(weights_table(&manifest, format)?.as_bytes());
            Ok(EXIT_OK)
        }
        Command::Synth(args) => {
            let (height, width) = parse_grid(&args.grid)?;
            let spec = CohortSpec {
                n: args.n,
                classes: args.classes,
                architectures: args.archs,
                methods: args.methods,
                misclassified_fraction: args.misclassified,
                height,
                width,
                seed: args.seed,
                ..CohortSpec::default()
            };
            fs::create_dir_all(&args.out)
                .map_err(|source| IoError::IoFailure { path: args.out.display().to_string(), source })?;
            let g = generate_cohort(&spec, &args.out)?;
            let _ = writeln!(out, "wrote {} ({} samples)", g.manifest_path.display(), g.manifest.samples.len());
            Ok(EXIT_OK)
        }
    }
}

/// Parses arguments and runs a command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(rendered.as_bytes());
            } else {
                let _ = out.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("semdrift").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("12x7").unwrap(), (12, 7));
        assert!(parse_grid("12").is_err());
        assert!(parse_grid("ax3").is_err());
    }

    #[test]
    fn bad_flags_are_config_errors() {
        assert_eq!(run_args(&["audit"]).0, EXIT_CONFIG);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_CONFIG);
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn threshold_and_workers_checked_before_loading() {
        let (code, _, err) = run_args(&["audit", "--manifest", "/nonexistent", "--threshold", "1.5"]);
        assert_eq!(code, EXIT_CONFIG, "{err}");
        let (code, _, _) = run_args(&["audit", "--manifest", "/nonexistent", "--workers", "0"]);
        assert_eq!(code, EXIT_CONFIG);
        let (code, _, _) = run_args(&["audit", "--manifest", "/nonexistent", "--format", "xml"]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn missing_manifest_is_data_error() {
        assert_eq!(run_args(&["validate", "--manifest", "/nonexistent/manifest.json"]).0, EXIT_DATA);
        assert_eq!(run_args(&["audit", "--manifest", "/nonexistent/manifest.json"]).0, EXIT_DATA);
    }

    #[test]
    fn synth_zero_samples_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("c");
        assert_eq!(run_args(&["synth", "--out", out.to_str().unwrap(), "--n", "0"]).0, EXIT_CONFIG);
    }

    #[test]
    fn select_rejects_undeclared() {
        let declared = vec!["a".to_string(), "b".to_string()];
        assert_eq!(select(&declared, &Some(vec!["b".into()]), "x").unwrap(), vec!["b".to_string()]);
        assert!(matches!(select(&declared, &Some(vec!["c".into()]), "x"), Err(CliError::Config(_))));
    }
}
