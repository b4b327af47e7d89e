//! Persistent data contracts: pair manifests, match files, geo annotations
//! and dataset splits.
//!
//! Every format is JSON-lines with a `schema` field. Loaders are total:
//! any byte stream yields typed data or a typed error carrying the file,
//! line and field at fault.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    CameraIntrinsics, Correspondence, Homography, MatchSet, Point2, RelativePose,
};
use crate::preprocess::BranchId;

pub const MANIFEST_SCHEMA: &str = "cmbench.manifest.v1";
pub const MATCHES_SCHEMA: &str = "cmbench.matches.v1";
pub const GEO_SCHEMA: &str = "cmbench.geo.v1";
pub const SPLIT_SCHEMA: &str = "cmbench.split.v1";

/// Coordinates may exceed the declared image bounds by this much.
pub const BOUNDS_SLACK: f64 = 1.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: parse error: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: schema violation in `{field}`: {message}")]
    SchemaViolation {
        file: String,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{file}:{line}: duplicate pair id `{id}`")]
    DuplicateId { file: String, line: usize, id: String },
    #[error("{file}: thermal and satellite point lists differ ({thermal} vs {satellite})")]
    MisalignedLists {
        file: String,
        thermal: usize,
        satellite: usize,
    },
    #[error("{file}: meters_per_pixel must be positive, got {value}")]
    NonPositiveScale { file: String, value: f64 },
    #[error("{file}: {message}")]
    Split { file: String, message: String },
}

impl IngestError {
    fn schema(file: &str, line: usize, field: &str, message: impl Into<String>) -> Self {
        IngestError::SchemaViolation {
            file: file.to_string(),
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IngestError> {
    fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Non-empty lines with their 1-based line numbers. Invalid UTF-8 is kept
/// as an error per line.
fn lines(bytes: &[u8]) -> impl Iterator<Item = (usize, Result<&str, std::str::Utf8Error>)> {
    bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            (i + 1, std::str::from_utf8(raw))
        })
        .filter(|(_, r)| !matches!(r, Ok(s) if s.trim().is_empty()))
}

/// Parses one JSON line, splitting syntax errors from structural ones.
fn parse_line<T: DeserializeOwned>(file: &str, line: usize, text: &str) -> Result<T, IngestError> {
    serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            IngestError::schema(file, line, "record", e.to_string())
        } else {
            IngestError::Parse {
                file: file.to_string(),
                line,
                message: e.to_string(),
            }
        }
    })
}

fn check_schema(file: &str, line: usize, found: &str, want: &str) -> Result<(), IngestError> {
    if found == want {
        Ok(())
    } else {
        Err(IngestError::schema(
            file,
            line,
            "schema",
            format!("expected `{want}`, found `{found}`"),
        ))
    }
}

/// Writes one JSON document per line. The output is canonical: loading and
/// re-writing a file produced here reproduces it byte for byte.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// Writes through a temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IngestError> {
    let io = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

// ---------------------------------------------------------------------------
// Pair manifests

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Homography,
    Pose,
    Geo,
    GeoHard,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Homography => "homography",
            Task::Pose => "pose",
            Task::Geo => "geo",
            Task::GeoHard => "geo_hard",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRef {
    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Ir,
    Vis,
}

/// Ground truth of a synthetic pair. `H` maps IR pixel coordinates onto VIS
/// pixel coordinates; `warped` records which image was resampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyTruth {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "H")]
    pub h: [f64; 9],
    pub warped: Side,
}

/// `x_vis = R · x_ir + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTruth {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_ir: Option<CameraIntrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_vis: Option<CameraIntrinsics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoTruth {
    /// Path of the annotation file, relative to the manifest.
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Homography(HomographyTruth),
    Pose(PoseTruth),
    Geo(GeoTruth),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub schema: String,
    pub pair_id: String,
    pub dataset_id: String,
    pub task: Task,
    pub ir: ImageRef,
    /// Visible image, or the satellite tile for the geo tasks.
    pub vis: ImageRef,
    pub ground_truth: GroundTruth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_id: Option<String>,
}

impl PairManifest {
    pub fn homography(&self) -> Option<Homography> {
        match &self.ground_truth {
            GroundTruth::Homography(t) => Homography::from_row_major(&t.h).ok(),
            _ => None,
        }
    }

    /// Ground-truth pose and the (IR, VIS) intrinsics.
    pub fn pose(&self) -> Option<(RelativePose, CameraIntrinsics, CameraIntrinsics)> {
        match &self.ground_truth {
            GroundTruth::Pose(p) => {
                let pose = RelativePose::new(
                    Matrix3::from_row_slice(&p.r),
                    Vector3::from_row_slice(&p.t),
                )
                .ok()?;
                Some((pose, p.k_ir?, p.k_vis?))
            }
            _ => None,
        }
    }

    pub fn annotation_path(&self, base_dir: &Path) -> Option<PathBuf> {
        match &self.ground_truth {
            GroundTruth::Geo(g) => Some(base_dir.join(&g.annotation)),
            _ => None,
        }
    }

    fn validate(&self, file: &str, line: usize) -> Result<(), IngestError> {
        check_schema(file, line, &self.schema, MANIFEST_SCHEMA)?;
        if self.pair_id.trim().is_empty() {
            return Err(IngestError::schema(file, line, "pair_id", "empty"));
        }
        for (field, img) in [("ir", &self.ir), ("vis", &self.vis)] {
            if img.width == 0 || img.height == 0 {
                return Err(IngestError::schema(file, line, field, "zero image dimension"));
            }
        }
        match (&self.task, &self.ground_truth) {
            (Task::Homography, GroundTruth::Homography(t)) => {
                if Homography::from_row_major(&t.h).is_err() {
                    return Err(IngestError::schema(
                        file,
                        line,
                        "ground_truth.H",
                        "singular or non-finite homography",
                    ));
                }
                if t.width == 0 || t.height == 0 {
                    return Err(IngestError::schema(file, line, "ground_truth.width", "zero size"));
                }
            }
            (Task::Pose, GroundTruth::Pose(p)) => {
                RelativePose::new(Matrix3::from_row_slice(&p.r), Vector3::from_row_slice(&p.t))
                    .map_err(|e| IngestError::schema(file, line, "ground_truth.R", e.to_string()))?;
                for (field, k) in [("ground_truth.k_ir", &p.k_ir), ("ground_truth.k_vis", &p.k_vis)] {
                    match k {
                        None => return Err(IngestError::schema(file, line, field, "missing intrinsics")),
                        Some(k) => k
                            .validate()
                            .map_err(|e| IngestError::schema(file, line, field, e.to_string()))?,
                    }
                }
                if self.scene_id.is_none() {
                    return Err(IngestError::schema(file, line, "scene_id", "required for pose pairs"));
                }
                if self.split_id.is_none() {
                    return Err(IngestError::schema(file, line, "split_id", "required for pose pairs"));
                }
            }
            (Task::Geo | Task::GeoHard, GroundTruth::Geo(g)) => {
                if g.annotation.trim().is_empty() {
                    return Err(IngestError::schema(
                        file,
                        line,
                        "ground_truth.annotation",
                        "empty path",
                    ));
                }
            }
            (task, _) => {
                return Err(IngestError::schema(
                    file,
                    line,
                    "ground_truth",
                    format!("ground-truth kind does not match task `{task}`"),
                ))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ManifestOptions {
    /// Fail when referenced image files are absent. Annotation files of geo
    /// pairs are always required.
    pub require_images: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestSet {
    pub base_dir: PathBuf,
    pub pairs: Vec<PairManifest>,
}

impl ManifestSet {
    pub fn summary(&self) -> BTreeMap<Task, usize> {
        let mut out = BTreeMap::new();
        for p in &self.pairs {
            *out.entry(p.task).or_insert(0) += 1;
        }
        out
    }

    pub fn of_task(&self, task: Task) -> impl Iterator<Item = &PairManifest> {
        self.pairs.iter().filter(move |p| p.task == task)
    }
}

/// Schema-validates manifest bytes. File existence is not checked here.
pub fn parse_manifest(bytes: &[u8], file: &str) -> Result<Vec<PairManifest>, IngestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, text) in lines(bytes) {
        let text = text.map_err(|e| IngestError::Parse {
            file: file.to_string(),
            line,
            message: e.to_string(),
        })?;
        let record: PairManifest = parse_line(file, line, text)?;
        record.validate(file, line)?;
        if !seen.insert(record.pair_id.clone()) {
            return Err(IngestError::DuplicateId {
                file: file.to_string(),
                line,
                id: record.pair_id,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path, opts: ManifestOptions) -> Result<ManifestSet, IngestError> {
    let file = path.display().to_string();
    let pairs = parse_manifest(&read_bytes(path)?, &file)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for (i, p) in pairs.iter().enumerate() {
        if let Some(ann) = p.annotation_path(&base_dir) {
            if !ann.is_file() {
                return Err(IngestError::schema(
                    &file,
                    i + 1,
                    "ground_truth.annotation",
                    format!("{} does not exist", ann.display()),
                ));
            }
        }
        if opts.require_images {
            for (field, img) in [("ir.path", &p.ir), ("vis.path", &p.vis)] {
                if !base_dir.join(&img.path).is_file() {
                    return Err(IngestError::schema(&file, i + 1, field, "image file missing"));
                }
            }
        }
    }
    Ok(ManifestSet { base_dir, pairs })
}

pub fn write_manifest(path: &Path, pairs: &[PairManifest]) -> Result<(), IngestError> {
    write_atomic(path, to_jsonl(pairs).as_bytes())
}

// ---------------------------------------------------------------------------
// Match files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatchRecordWire {
    schema: String,
    pair_id: String,
    matcher_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    branch: BranchId,
    size_a: [u32; 2],
    size_b: [u32; 2],
    resize: String,
    /// `[xa, ya, xb, yb]` or `[xa, ya, xb, yb, confidence]`.
    matches: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

/// Matches produced by one matcher on one (optionally preprocessed) pair.
/// Coordinates are in original image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchFileRecord {
    pub pair_id: String,
    pub matcher_id: String,
    pub category: Option<String>,
    pub branch: BranchId,
    pub size_a: (u32, u32),
    pub size_b: (u32, u32),
    pub resize: String,
    pub matches: MatchSet,
    pub note: Option<String>,
}

impl MatchFileRecord {
    fn to_wire(&self) -> MatchRecordWire {
        MatchRecordWire {
            schema: MATCHES_SCHEMA.to_string(),
            pair_id: self.pair_id.clone(),
            matcher_id: self.matcher_id.clone(),
            category: self.category.clone(),
            branch: self.branch,
            size_a: [self.size_a.0, self.size_a.1],
            size_b: [self.size_b.0, self.size_b.1],
            resize: self.resize.clone(),
            matches: self
                .matches
                .iter()
                .map(|c| {
                    let mut row = vec![c.a.x, c.a.y, c.b.x, c.b.y];
                    row.extend(c.confidence);
                    row
                })
                .collect(),
            note: self.note.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuarantineReason {
    Parse(String),
    Schema { field: String, message: String },
    CapExceeded { count: usize, cap: usize },
    OutOfBounds { index: usize },
    Duplicate,
}

impl fmt::Display for QuarantineReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuarantineReason::Parse(m) => write!(f, "parse error: {m}"),
            QuarantineReason::Schema { field, message } => write!(f, "`{field}`: {message}"),
            QuarantineReason::CapExceeded { count, cap } => {
                write!(f, "{count} matches exceed the cap of {cap}")
            }
            QuarantineReason::OutOfBounds { index } => {
                write!(f, "match {index} lies outside the image bounds")
            }
            QuarantineReason::Duplicate => f.write_str("duplicate (pair, matcher, branch) record"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quarantined {
    pub file: String,
    pub line: usize,
    pub pair_id: Option<String>,
    pub reason: QuarantineReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchFile {
    pub records: Vec<MatchFileRecord>,
    pub quarantine: Vec<Quarantined>,
}

fn in_bounds(p: &Point2, size: [u32; 2]) -> bool {
    p.is_finite()
        && p.x >= -BOUNDS_SLACK
        && p.y >= -BOUNDS_SLACK
        && p.x <= size[0] as f64 + BOUNDS_SLACK
        && p.y <= size[1] as f64 + BOUNDS_SLACK
}

fn validate_match_record(wire: MatchRecordWire, cap: usize) -> Result<MatchFileRecord, QuarantineReason> {
    let schema = |field: &str, message: String| QuarantineReason::Schema {
        field: field.to_string(),
        message,
    };
    if wire.schema != MATCHES_SCHEMA {
        return Err(schema("schema", format!("expected `{MATCHES_SCHEMA}`")));
    }
    if wire.pair_id.trim().is_empty() {
        return Err(schema("pair_id", "empty".into()));
    }
    if wire.matcher_id.trim().is_empty() {
        return Err(schema("matcher_id", "empty".into()));
    }
    if wire.size_a.contains(&0) || wire.size_b.contains(&0) {
        return Err(schema("size_a", "zero image dimension".into()));
    }
    if wire.matches.len() > cap {
        return Err(QuarantineReason::CapExceeded {
            count: wire.matches.len(),
            cap,
        });
    }
    let mut pairs = Vec::with_capacity(wire.matches.len());
    for (i, row) in wire.matches.iter().enumerate() {
        if row.len() != 4 && row.len() != 5 {
            return Err(schema("matches", format!("row {i} has {} values", row.len())));
        }
        let a = Point2::new(row[0], row[1]);
        let b = Point2::new(row[2], row[3]);
        if !in_bounds(&a, wire.size_a) || !in_bounds(&b, wire.size_b) {
            return Err(QuarantineReason::OutOfBounds { index: i });
        }
        let confidence = row.get(4).copied();
        if let Some(c) = confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(schema("matches", format!("row {i} confidence {c} outside [0, 1]")));
            }
        }
        pairs.push(Correspondence { a, b, confidence });
    }
    Ok(MatchFileRecord {
        pair_id: wire.pair_id,
        matcher_id: wire.matcher_id,
        category: wire.category,
        branch: wire.branch,
        size_a: (wire.size_a[0], wire.size_a[1]),
        size_b: (wire.size_b[0], wire.size_b[1]),
        resize: wire.resize,
        matches: MatchSet::new(pairs),
        note: wire.note,
    })
}

/// Validates match-file bytes record by record. Bad records are quarantined
/// and never abort the file.
pub fn parse_matches(bytes: &[u8], cap: usize, file: &str) -> MatchFile {
    let mut out = MatchFile::default();
    let mut seen = HashSet::new();
    for (line, text) in lines(bytes) {
        let quarantine = |pair_id: Option<String>, reason| Quarantined {
            file: file.to_string(),
            line,
            pair_id,
            reason,
        };
        let text = match text {
            Ok(t) => t,
            Err(e) => {
                out.quarantine.push(quarantine(None, QuarantineReason::Parse(e.to_string())));
                continue;
            }
        };
        let wire: MatchRecordWire = match serde_json::from_str(text) {
            Ok(w) => w,
            Err(e) => {
                let reason = if e.is_data() {
                    QuarantineReason::Schema {
                        field: "record".into(),
                        message: e.to_string(),
                    }
                } else {
                    QuarantineReason::Parse(e.to_string())
                };
                out.quarantine.push(quarantine(None, reason));
                continue;
            }
        };
        let pair_id = wire.pair_id.clone();
        match validate_match_record(wire, cap) {
            Ok(rec) => {
                let key = (rec.pair_id.clone(), rec.matcher_id.clone(), rec.branch);
                if seen.insert(key) {
                    out.records.push(rec);
                } else {
                    out.quarantine
                        .push(quarantine(Some(pair_id), QuarantineReason::Duplicate));
                }
            }
            Err(reason) => out.quarantine.push(quarantine(Some(pair_id), reason)),
        }
    }
    out
}

pub fn load_matches(path: &Path, cap: usize) -> Result<MatchFile, IngestError> {
    Ok(parse_matches(&read_bytes(path)?, cap, &path.display().to_string()))
}

/// Loads every `*.jsonl` file in `dir` in file-name order.
pub fn load_matches_dir(dir: &Path, cap: usize) -> Result<MatchFile, IngestError> {
    let io = |source| IngestError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl") && p.is_file())
        .collect();
    files.sort();
    let mut out = MatchFile::default();
    let mut seen = HashSet::new();
    for f in files {
        let loaded = load_matches(&f, cap)?;
        for rec in loaded.records {
            if seen.insert((rec.pair_id.clone(), rec.matcher_id.clone(), rec.branch)) {
                out.records.push(rec);
            } else {
                out.quarantine.push(Quarantined {
                    file: f.display().to_string(),
                    line: 0,
                    pair_id: Some(rec.pair_id),
                    reason: QuarantineReason::Duplicate,
                });
            }
        }
        out.quarantine.extend(loaded.quarantine);
    }
    Ok(out)
}

pub fn matches_to_jsonl(records: &[MatchFileRecord]) -> String {
    let wires: Vec<MatchRecordWire> = records.iter().map(MatchFileRecord::to_wire).collect();
    to_jsonl(&wires)
}

pub fn write_matches(path: &Path, records: &[MatchFileRecord]) -> Result<(), IngestError> {
    write_atomic(path, matches_to_jsonl(records).as_bytes())
}

/// Index of match records keyed by (matcher, branch, pair).
#[derive(Debug, Clone, Default)]
pub struct MatchIndex {
    map: HashMap<(String, BranchId, String), MatchFileRecord>,
}

impl MatchIndex {
    pub fn new(records: Vec<MatchFileRecord>) -> Self {
        Self {
            map: records
                .into_iter()
                .map(|r| ((r.matcher_id.clone(), r.branch, r.pair_id.clone()), r))
                .collect(),
        }
    }

    pub fn get(&self, matcher: &str, branch: BranchId, pair_id: &str) -> Option<&MatchFileRecord> {
        self.map
            .get(&(matcher.to_string(), branch, pair_id.to_string()))
    }

    pub fn matchers(&self) -> BTreeSet<String> {
        self.map.keys().map(|(m, _, _)| m.clone()).collect()
    }

    /// First category declared by any record of `matcher`.
    pub fn category(&self, matcher: &str) -> Option<String> {
        let mut found: Vec<&String> = self
            .map
            .iter()
            .filter(|((m, _, _), _)| m == matcher)
            .filter_map(|(_, r)| r.category.as_ref())
            .collect();
        found.sort();
        found.first().map(|s| s.to_string())
    }
}

// ---------------------------------------------------------------------------
// Geo annotations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GeoWire {
    schema: String,
    pair_id: String,
    thermal_points: Vec<[f64; 2]>,
    satellite_points: Vec<[f64; 2]>,
    meters_per_pixel: f64,
    #[serde(default)]
    note: String,
}

/// Manually placed thermal/satellite point pairs for one geo pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoAnnotation {
    pub pair_id: String,
    pub thermal_points: Vec<Point2>,
    pub satellite_points: Vec<Point2>,
    /// Ground sample distance of the satellite tile.
    pub meters_per_pixel: f64,
    pub note: String,
}

impl GeoAnnotation {
    fn to_wire(&self) -> GeoWire {
        GeoWire {
            schema: GEO_SCHEMA.to_string(),
            pair_id: self.pair_id.clone(),
            thermal_points: self.thermal_points.iter().map(|p| [p.x, p.y]).collect(),
            satellite_points: self.satellite_points.iter().map(|p| [p.x, p.y]).collect(),
            meters_per_pixel: self.meters_per_pixel,
            note: self.note.clone(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&[self.to_wire()])
    }
}

pub fn parse_geo_annotation(bytes: &[u8], file: &str) -> Result<GeoAnnotation, IngestError> {
    let mut records = Vec::new();
    for (line, text) in lines(bytes) {
        let text = text.map_err(|e| IngestError::Parse {
            file: file.to_string(),
            line,
            message: e.to_string(),
        })?;
        records.push((line, parse_line::<GeoWire>(file, line, text)?));
    }
    let (line, wire) = match records.len() {
        1 => records.pop().expect("one record"),
        n => {
            return Err(IngestError::schema(
                file,
                records.first().map_or(1, |r| r.0),
                "record",
                format!("expected exactly one annotation record, found {n}"),
            ))
        }
    };
    check_schema(file, line, &wire.schema, GEO_SCHEMA)?;
    if wire.thermal_points.len() != wire.satellite_points.len() {
        return Err(IngestError::MisalignedLists {
            file: file.to_string(),
            thermal: wire.thermal_points.len(),
            satellite: wire.satellite_points.len(),
        });
    }
    if wire.thermal_points.is_empty() {
        return Err(IngestError::schema(file, line, "thermal_points", "no ground-truth points"));
    }
    if !(wire.meters_per_pixel > 0.0) || !wire.meters_per_pixel.is_finite() {
        return Err(IngestError::NonPositiveScale {
            file: file.to_string(),
            value: wire.meters_per_pixel,
        });
    }
    let to_points = |v: &[[f64; 2]]| v.iter().map(|p| Point2::new(p[0], p[1])).collect();
    Ok(GeoAnnotation {
        pair_id: wire.pair_id.clone(),
        thermal_points: to_points(&wire.thermal_points),
        satellite_points: to_points(&wire.satellite_points),
        meters_per_pixel: wire.meters_per_pixel,
        note: wire.note,
    })
}

pub fn load_geo_annotation(path: &Path) -> Result<GeoAnnotation, IngestError> {
    parse_geo_annotation(&read_bytes(path)?, &path.display().to_string())
}

pub fn write_geo_annotation(path: &Path, annotation: &GeoAnnotation) -> Result<(), IngestError> {
    write_atomic(path, annotation.to_jsonl().as_bytes())
}

// ---------------------------------------------------------------------------
// Dataset splits

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub schema: String,
    pub name: String,
    pub role: SplitRole,
    pub pair_ids: Vec<String>,
}

pub fn parse_splits(bytes: &[u8], file: &str) -> Result<Vec<DatasetSplit>, IngestError> {
    let mut out = Vec::new();
    for (line, text) in lines(bytes) {
        let text = text.map_err(|e| IngestError::Parse {
            file: file.to_string(),
            line,
            message: e.to_string(),
        })?;
        let split: DatasetSplit = parse_line(file, line, text)?;
        check_schema(file, line, &split.schema, SPLIT_SCHEMA)?;
        out.push(split);
    }
    Ok(out)
}

pub fn load_splits(path: &Path) -> Result<Vec<DatasetSplit>, IngestError> {
    parse_splits(&read_bytes(path)?, &path.display().to_string())
}

/// Checks that every listed pair exists and that no scene is shared by two
/// roles.
pub fn validate_splits(splits: &[DatasetSplit], manifests: &[PairManifest]) -> Result<(), IngestError> {
    let by_id: HashMap<&str, &PairManifest> =
        manifests.iter().map(|m| (m.pair_id.as_str(), m)).collect();
    let mut scene_role: HashMap<String, SplitRole> = HashMap::new();
    for split in splits {
        for id in &split.pair_ids {
            let m = by_id.get(id.as_str()).ok_or_else(|| IngestError::Split {
                file: split.name.clone(),
                message: format!("unknown pair id `{id}`"),
            })?;
            let scene = m.scene_id.clone().unwrap_or_else(|| m.pair_id.clone());
            if let Some(prev) = scene_role.insert(scene.clone(), split.role) {
                if prev != split.role {
                    return Err(IngestError::Split {
                        file: split.name.clone(),
                        message: format!("scene `{scene}` appears in {prev:?} and {:?}", split.role),
                    });
                }
            }
        }
    }
    Ok(())
}
