//! On-disk formats: the `ADM1` attribution-map container and the JSON cohort
//! manifest.
//!
//! Map file layout (all integers and floats little-endian):
//!
//! ```text
//! offset 0   4 bytes   magic "ADM1"
//! offset 4   u32       height
//! offset 8   u32       width
//! offset 12  f32 × h·w row-major values
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::{AttributionMap, MapError};

pub const MAP_MAGIC: [u8; 4] = *b"ADM1";
pub const MAP_HEADER_LEN: usize = 12;
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: bad magic {found:?}, expected \"ADM1\"")]
    BadMagic { path: String, found: [u8; 4] },
    #[error("{path}: truncated payload ({found} bytes, expected {expected})")]
    TruncatedPayload { path: String, found: usize, expected: usize },
    #[error("{path}: non-finite value at index {index}")]
    NonFiniteValue { path: String, index: usize },
    #[error("{path}: {source}")]
    InvalidMap { path: String, source: MapError },
    #[error("{path}: {source}")]
    IoFailure { path: String, source: std::io::Error },
    #[error("schema violation at {pointer}: {message}")]
    SchemaViolation { pointer: String, message: String },
    #[error("dangling map reference at {pointer}: {path} does not exist")]
    DanglingMapRef { pointer: String, path: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::IoFailure { path: path.display().to_string(), source }
    }

    fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        IoError::SchemaViolation { pointer: pointer.into(), message: message.into() }
    }
}

/// Serializes a normalized map into the container format.
pub fn encode_map(map: &AttributionMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(MAP_HEADER_LEN + 4 * map.len());
    buf.extend_from_slice(&MAP_MAGIC);
    buf.extend_from_slice(&(map.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.width() as u32).to_le_bytes());
    for v in map.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Parses the container format. `origin` only labels errors.
pub fn decode_map(bytes: &[u8], origin: &str) -> Result<AttributionMap, IoError> {
    if bytes.len() < MAP_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAP_MAGIC {
            return Err(IoError::BadMagic { path: origin.into(), found: bytes[..4].try_into().unwrap() });
        }
        return Err(IoError::TruncatedPayload {
            path: origin.into(),
            found: bytes.len(),
            expected: MAP_HEADER_LEN,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAP_MAGIC {
        return Err(IoError::BadMagic { path: origin.into(), found: magic });
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(MAP_HEADER_LEN))
        .ok_or_else(|| IoError::InvalidMap { path: origin.into(), source: MapError::EmptyGrid })?;
    if bytes.len() != expected {
        return Err(IoError::TruncatedPayload { path: origin.into(), found: bytes.len(), expected });
    }
    let values: Vec<f32> = bytes[MAP_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(IoError::NonFiniteValue { path: origin.into(), index });
    }
    AttributionMap::from_normalized(height, width, values)
        .map_err(|source| IoError::InvalidMap { path: origin.into(), source })
}

pub fn write_map(map: &AttributionMap, path: &Path) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| IoError::io(parent, e))?;
    }
    fs::write(path, encode_map(map)).map_err(|e| IoError::io(path, e))
}

pub fn read_map(path: &Path) -> Result<AttributionMap, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_map(&bytes, &path.display().to_string())
}

/// Checkpoint role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "TL")]
    Tl,
    #[serde(rename = "FT")]
    Ft,
}

impl Phase {
    pub const BOTH: [Phase; 2] = [Phase::Tl, Phase::Ft];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Tl => "TL",
            Phase::Ft => "FT",
        }
    }
}

/// A value recorded for each of the two phases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePair<T> {
    #[serde(rename = "TL")]
    pub tl: T,
    #[serde(rename = "FT")]
    pub ft: T,
}

impl<T> PhasePair<T> {
    pub fn get(&self, phase: Phase) -> &T {
        match phase {
            Phase::Tl => &self.tl,
            Phase::Ft => &self.ft,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassInfo {
    pub name: String,
    pub test_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseInfo {
    pub role: Phase,
    pub epoch: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub true_class: usize,
    pub predictions: BTreeMap<String, PhasePair<usize>>,
    /// architecture → method → phase → path relative to the manifest directory.
    pub maps: BTreeMap<String, BTreeMap<String, PhasePair<String>>>,
}

impl SampleRecord {
    pub fn map_ref(&self, architecture: &str, method: &str, phase: Phase) -> Option<&str> {
        self.maps.get(architecture)?.get(method).map(|p| p.get(phase).as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub schema_version: u32,
    pub classes: Vec<ClassInfo>,
    pub architectures: Vec<String>,
    pub methods: Vec<String>,
    pub phases: Vec<PhaseInfo>,
    /// Optional target-layer name per architecture.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub layers: BTreeMap<String, String>,
    pub samples: Vec<SampleRecord>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CohortManifest {
    pub fn class_counts(&self) -> Vec<u64> {
        self.classes.iter().map(|c| c.test_count).collect()
    }

    pub fn epoch(&self, phase: Phase) -> Option<u32> {
        self.phases.iter().find(|p| p.role == phase).map(|p| p.epoch)
    }

    pub fn sample(&self, id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn resolve(&self, map_ref: &str) -> PathBuf {
        self.base_dir.join(map_ref)
    }

    /// Checks every invariant not expressible in the serde schema.
    pub fn validate(&self) -> Result<(), IoError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(IoError::schema(
                "/schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.classes.is_empty() {
            return Err(IoError::schema("/classes", "at least one class required"));
        }
        let mut names = HashSet::new();
        for (k, c) in self.classes.iter().enumerate() {
            if !names.insert(c.name.as_str()) {
                return Err(IoError::schema(format!("/classes/{k}/name"), format!("duplicate class {:?}", c.name)));
            }
            if c.test_count == 0 {
                return Err(IoError::schema(format!("/classes/{k}/test_count"), "must be positive"));
            }
        }
        unique_nonempty(&self.architectures, "/architectures")?;
        unique_nonempty(&self.methods, "/methods")?;
        if self.phases.len() != 2 {
            return Err(IoError::schema("/phases", format!("expected exactly 2 phases, found {}", self.phases.len())));
        }
        if self.phases[0].role == self.phases[1].role {
            return Err(IoError::schema("/phases/1/role", "phases must carry roles TL and FT"));
        }
        if self.phases[0].epoch == self.phases[1].epoch {
            return Err(IoError::schema("/phases/1/epoch", "phases must carry distinct epochs"));
        }
        for arch in self.layers.keys() {
            if !self.architectures.contains(arch) {
                return Err(IoError::schema(format!("/layers/{}", escape(arch)), "undeclared architecture"));
            }
        }

        let mut ids = HashSet::new();
        for (k, s) in self.samples.iter().enumerate() {
            let at = format!("/samples/{k}");
            if s.id.is_empty() {
                return Err(IoError::schema(format!("{at}/id"), "empty sample id"));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(IoError::DuplicateSampleId(s.id.clone()));
            }
            if s.true_class >= self.classes.len() {
                return Err(IoError::schema(format!("{at}/true_class"), format!("class index {} out of range", s.true_class)));
            }
            for arch in &self.architectures {
                let pred = s.predictions.get(arch).ok_or_else(|| {
                    IoError::schema(format!("{at}/predictions/{}", escape(arch)), "missing predictions")
                })?;
                for phase in Phase::BOTH {
                    if *pred.get(phase) >= self.classes.len() {
                        return Err(IoError::schema(
                            format!("{at}/predictions/{}/{}", escape(arch), phase.as_str()),
                            "class index out of range",
                        ));
                    }
                }
                for method in &self.methods {
                    if s.map_ref(arch, method, Phase::Tl).is_none() {
                        return Err(IoError::schema(
                            format!("{at}/maps/{}/{}", escape(arch), escape(method)),
                            "missing map references",
                        ));
                    }
                }
            }
            for arch in s.predictions.keys() {
                if !self.architectures.contains(arch) {
                    return Err(IoError::schema(format!("{at}/predictions/{}", escape(arch)), "undeclared architecture"));
                }
            }
            for (arch, by_method) in &s.maps {
                if !self.architectures.contains(arch) {
                    return Err(IoError::schema(format!("{at}/maps/{}", escape(arch)), "undeclared architecture"));
                }
                for method in by_method.keys() {
                    if !self.methods.contains(method) {
                        return Err(IoError::schema(
                            format!("{at}/maps/{}/{}", escape(arch), escape(method)),
                            "undeclared method",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Every referenced map path, with its JSON pointer, in manifest order.
    pub fn map_refs(&self) -> Vec<(String, &str)> {
        let mut out = Vec::new();
        for (k, s) in self.samples.iter().enumerate() {
            for (arch, by_method) in &s.maps {
                for (method, pair) in by_method {
                    for phase in Phase::BOTH {
                        let pointer =
                            format!("/samples/{k}/maps/{}/{}/{}", escape(arch), escape(method), phase.as_str());
                        out.push((pointer, pair.get(phase).as_str()));
                    }
                }
            }
        }
        out
    }

    pub fn check_map_files(&self) -> Result<(), IoError> {
        for (pointer, path) in self.map_refs() {
            if !self.resolve(path).is_file() {
                return Err(IoError::DanglingMapRef { pointer, path: path.to_owned() });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| IoError::io(path, e))
    }
}

fn unique_nonempty(items: &[String], at: &str) -> Result<(), IoError> {
    if items.is_empty() {
        return Err(IoError::schema(at, "at least one entry required"));
    }
    let mut seen = HashSet::new();
    for (k, item) in items.iter().enumerate() {
        if item.is_empty() || !seen.insert(item.as_str()) {
            return Err(IoError::schema(format!("{at}/{k}"), format!("empty or duplicate identifier {item:?}")));
        }
    }
    Ok(())
}

/// JSON-pointer token escaping.
fn escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

/// When to check that referenced map files exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapCheck {
    #[default]
    Eager,
    Lazy,
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<CohortManifest, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut manifest: CohortManifest = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = path_to_pointer(e.path());
        IoError::schema(pointer, e.into_inner().to_string())
    })?;
    manifest.base_dir = base_dir.to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

fn path_to_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape(variant))),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

pub fn load_manifest(path: &Path, check: MapCheck) -> Result<CohortManifest, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, &base)?;
    if check == MapCheck::Eager {
        manifest.check_map_files()?;
    }
    Ok(manifest)
}

/// Conventional relative location of a map inside a cohort directory.
pub fn conventional_map_path(architecture: &str, method: &str, phase: Phase, sample_id: &str) -> String {
    format!("maps/{architecture}/{method}/{}/{sample_id}.adm", phase.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::normalize_flat;

    fn minimal() -> String {
        r#"{"schema_version":1,
            "classes":[{"name":"Normal","test_count":3}],
            "architectures":["A"],
            "methods":["M"],
            "phases":[{"role":"TL","epoch":8},{"role":"FT","epoch":19}],
            "samples":[{"id":"s0","true_class":0,
                "predictions":{"A":{"TL":0,"FT":0}},
                "maps":{"A":{"M":{"TL":"a.adm","FT":"b.adm"}}}}]}"#
            .to_string()
    }

    #[test]
    fn two_by_two_file_is_28_bytes() {
        let m = AttributionMap::from_normalized(2, 2, vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let bytes = encode_map(&m);
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[..4], b"ADM1");
        assert_eq!(decode_map(&bytes, "x").unwrap(), m);
    }

    #[test]
    fn zero_map_round_trips_degenerate() {
        let m = normalize_flat(3, 3, &[0.0; 9]).unwrap();
        let back = decode_map(&encode_map(&m), "x").unwrap();
        assert!(back.is_degenerate());
    }

    #[test]
    fn decode_errors() {
        let m = AttributionMap::from_normalized(1, 2, vec![0.0, 1.0]).unwrap();
        let mut bytes = encode_map(&m);
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_map(&bad, "x"), Err(IoError::BadMagic { .. })));
        assert!(matches!(decode_map(&bad[..6], "x"), Err(IoError::BadMagic { .. })));
        assert!(matches!(decode_map(&bytes[..15], "x"), Err(IoError::TruncatedPayload { .. })));
        assert!(matches!(decode_map(&bytes[..3], "x"), Err(IoError::TruncatedPayload { .. })));
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode_map(&bytes, "x"), Err(IoError::TruncatedPayload { .. })));
        let mut nan = encode_map(&m);
        nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_map(&nan, "x"), Err(IoError::NonFiniteValue { index: 0, .. })));
        let mut out_of_range = encode_map(&m);
        out_of_range[12..16].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode_map(&out_of_range, "x"), Err(IoError::InvalidMap { .. })));
    }

    #[test]
    fn minimal_manifest_parses() {
        let m = parse_manifest(&minimal(), Path::new("/tmp")).unwrap();
        assert_eq!(m.samples.len(), 1);
        assert_eq!(m.epoch(Phase::Ft), Some(19));
        assert_eq!(m.resolve("a.adm"), Path::new("/tmp/a.adm"));
    }

    #[test]
    fn missing_ft_prediction_is_schema_violation() {
        let text = minimal().replace(r#"{"TL":0,"FT":0}"#, r#"{"TL":0}"#);
        match parse_manifest(&text, Path::new(".")) {
            Err(IoError::SchemaViolation { pointer, .. }) => {
                assert_eq!(pointer, "/samples/0/predictions/A");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_violations_carry_pointers() {
        let cases = [
            (minimal().replace(r#""schema_version":1"#, r#""schema_version":2"#), "/schema_version"),
            (minimal().replace(r#""epoch":19"#, r#""epoch":8"#), "/phases/1/epoch"),
            (minimal().replace(r#""true_class":0"#, r#""true_class":4"#), "/samples/0/true_class"),
            (minimal().replace(r#""predictions":{"A""#, r#""predictions":{"B""#), "/samples/0/predictions/A"),
            (minimal().replace(r#""maps":{"A":{"M""#, r#""maps":{"A":{"N""#), "/samples/0/maps/A/M"),
            (minimal().replace(r#""test_count":3"#, r#""test_count":0"#), "/classes/0/test_count"),
        ];
        for (text, expected) in cases {
            match parse_manifest(&text, Path::new(".")) {
                Err(IoError::SchemaViolation { pointer, .. }) => assert_eq!(pointer, expected),
                other => panic!("{expected}: {other:?}"),
            }
        }
    }

    #[test]
    fn duplicate_sample_rejected() {
        let mut m = parse_manifest(&minimal(), Path::new(".")).unwrap();
        m.samples.push(m.samples[0].clone());
        assert!(matches!(m.validate(), Err(IoError::DuplicateSampleId(id)) if id == "s0"));
    }

    #[test]
    fn eager_check_reports_dangling_ref() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, minimal()).unwrap();
        assert!(matches!(load_manifest(&path, MapCheck::Eager), Err(IoError::DanglingMapRef { .. })));
        assert!(load_manifest(&path, MapCheck::Lazy).is_ok());
    }

    #[test]
    fn serialization_round_trip_preserves_order() {
        let m = parse_manifest(&minimal(), Path::new(".")).unwrap();
        let again = parse_manifest(&m.to_json(), Path::new(".")).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn pointer_escaping() {
        assert_eq!(escape("a/b~c"), "a~1b~0c");
    }
}
