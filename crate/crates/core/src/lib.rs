//! Reference-free auditing of attribution-map drift between a
//! transfer-learning checkpoint and a fine-tuned checkpoint.
//!
//! The pipeline: load a cohort manifest ([`io`]), keep samples classified
//! correctly at both checkpoints by every architecture ([`cohort`]), compute
//! per-sample drift metrics on each TL/FT map pair ([`metrics`]), aggregate
//! them with inverse-frequency class weights, and assemble rankings and
//! cross-method reversals ([`report`]). [`synth`] generates map pairs and
//! cohorts with known drift.

pub mod cli;
pub mod cohort;
pub mod io;
pub mod maps;
pub mod metrics;
pub mod report;
pub mod synth;

pub use cohort::{aggregate, compute_weights, filter_true_positive, ClassWeights, WeightedStat};
pub use io::{load_manifest, read_map, write_map, CohortManifest, MapCheck, Phase};
pub use maps::{binarize, center_of_mass, normalize, AttributionMap, BinaryMask, Centroid, DEFAULT_THRESHOLD};
pub use metrics::{drift, DriftFlag, DriftRecord, RecordIds};
pub use report::{build_report, render, DriftReport, Format};
