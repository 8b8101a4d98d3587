//! Landmark files, AU label tables and dataset manifests.
//!
//! File formats:
//!
//! - landmark file: UTF-8 text, exactly `N` lines, each holding three
//!   whitespace-separated decimal floats (x y z). No comments, no blank lines.
//! - label file: CSV with header `frame_id,subject_id,AU01,AU02,...`; cells are
//!   `1` (present), `0` (absent) or `9` (no information).
//! - manifest: JSON `{"n_landmarks", "label_file", "entries": [{"frame_id",
//!   "subject_id", "landmark_file"}]}`; relative paths resolve against the
//!   manifest's directory.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Landmark count used throughout the experiments.
pub const DEFAULT_LANDMARKS: usize = 83;

/// The twelve AUs coded in the reference experiments.
pub const DEFAULT_AUS: [u32; 12] = [1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24];

pub type Point3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandmarkError {
    #[error("expected {expected} landmark lines, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("line {line}: malformed landmark line {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("line {line}: non-finite coordinate")]
    NonFinite { line: usize },
    #[error("landmark file is not valid UTF-8")]
    NotUtf8,
    #[error("expected landmark count must be at least 1")]
    InvalidCount,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("label file is not valid UTF-8")]
    NotUtf8,
    #[error("label header must start with frame_id,subject_id and name at least one AU column")]
    BadHeader,
    #[error("row {row}: expected {expected} columns, found {found}")]
    WrongColumnCount { row: usize, expected: usize, found: usize },
    #[error("frame {frame_id}, {au}: unknown cell value {value:?} (expected 0, 1 or 9)")]
    UnknownCellValue { frame_id: String, au: String, value: String },
    #[error("duplicate frame {0}")]
    DuplicateFrame(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Landmarks { path: PathBuf, source: LandmarkError },
    #[error("{path}: {source}")]
    Labels { path: PathBuf, source: LabelError },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("manifest lists frame {0} more than once")]
    DuplicateEntry(String),
    #[error("frame {0} has no row in the label table")]
    MissingLabel(String),
    #[error("frame {frame_id}: manifest subject {manifest} disagrees with label subject {labels}")]
    SubjectMismatch { frame_id: String, manifest: String, labels: String },
    #[error("label table is empty")]
    EmptyTable,
}

/// One frame's landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub frame_id: String,
    pub subject_id: String,
    pub points: Vec<Point3>,
}

/// Parse a landmark file body into exactly `expected_n` points.
pub fn parse_landmark_file(raw: &[u8], expected_n: usize) -> Result<Vec<Point3>, LandmarkError> {
    if expected_n == 0 {
        return Err(LandmarkError::InvalidCount);
    }
    let text = std::str::from_utf8(raw).map_err(|_| LandmarkError::NotUtf8)?;
    let body = text.strip_suffix('\n').unwrap_or(text);
    let lines: Vec<&str> = if body.is_empty() {
        Vec::new()
    } else {
        body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect()
    };
    if lines.len() != expected_n {
        return Err(LandmarkError::WrongCount { expected: expected_n, found: lines.len() });
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| parse_point(i + 1, line))
        .collect()
}

fn parse_point(line_no: usize, line: &str) -> Result<Point3, LandmarkError> {
    let malformed = || LandmarkError::MalformedLine { line: line_no, content: line.to_string() };
    let mut tokens = line.split_whitespace();
    let mut point = [0.0; 3];
    for slot in point.iter_mut() {
        let token = tokens.next().ok_or_else(malformed)?;
        *slot = token.parse::<f64>().map_err(|_| malformed())?;
    }
    if tokens.next().is_some() {
        return Err(malformed());
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(LandmarkError::NonFinite { line: line_no });
    }
    Ok(point)
}

/// Serialize points with shortest round-trip float formatting.
pub fn write_landmark_file(points: &[Point3]) -> String {
    let mut out = String::with_capacity(points.len() * 32);
    for p in points {
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuState {
    Present,
    Absent,
    Unknown,
}

impl AuState {
    pub fn from_code(code: &str) -> Option<Self> {
        match code.trim() {
            "1" => Some(AuState::Present),
            "0" => Some(AuState::Absent),
            "9" => Some(AuState::Unknown),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            AuState::Present => 1,
            AuState::Absent => 0,
            AuState::Unknown => 9,
        }
    }
}

/// AU identifier as carried in a label header (e.g. `AU01`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuId(pub String);

impl AuId {
    pub fn from_number(n: u32) -> Self {
        AuId(format!("AU{n:02}"))
    }

    /// Short label for reports: `AU01` becomes `1`; non-numeric ids pass through.
    pub fn short(&self) -> String {
        let digits = self.0.strip_prefix("AU").unwrap_or(&self.0);
        match digits.parse::<u32>() {
            Ok(n) => n.to_string(),
            Err(_) => self.0.clone(),
        }
    }
}

impl fmt::Display for AuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub frame_id: String,
    pub subject_id: String,
    pub states: Vec<AuState>,
}

/// Per-frame AU annotations; rows keep file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelTable {
    au_ids: Vec<AuId>,
    rows: Vec<LabelRow>,
    index: HashMap<String, usize>,
}

impl LabelTable {
    pub fn new(au_ids: Vec<AuId>) -> Self {
        LabelTable { au_ids, rows: Vec::new(), index: HashMap::new() }
    }

    pub fn push(&mut self, row: LabelRow) -> Result<(), LabelError> {
        assert_eq!(row.states.len(), self.au_ids.len(), "row width must match the AU list");
        if self.index.contains_key(&row.frame_id) {
            return Err(LabelError::DuplicateFrame(row.frame_id));
        }
        self.index.insert(row.frame_id.clone(), self.rows.len());
        self.rows.push(row);
        Ok(())
    }

    pub fn au_ids(&self) -> &[AuId] {
        &self.au_ids
    }

    pub fn rows(&self) -> &[LabelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, frame_id: &str) -> Option<&LabelRow> {
        self.index.get(frame_id).map(|&i| &self.rows[i])
    }

    pub fn au_position(&self, au: &AuId) -> Option<usize> {
        self.au_ids.iter().position(|a| a == au)
    }

    /// Keep only the given frames, in the given order.
    pub fn restrict_to<'a>(&self, frame_ids: impl IntoIterator<Item = &'a str>) -> Option<LabelTable> {
        let mut out = LabelTable::new(self.au_ids.clone());
        for id in frame_ids {
            let row = self.get(id)?.clone();
            out.push(row).ok()?;
        }
        Some(out)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_id,subject_id");
        for au in &self.au_ids {
            out.push(',');
            out.push_str(&au.0);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.frame_id);
            out.push(',');
            out.push_str(&row.subject_id);
            for s in &row.states {
                out.push(',');
                out.push_str(&s.code().to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_label_file(raw: &[u8]) -> Result<LabelTable, LabelError> {
    std::str::from_utf8(raw).map_err(|_| LabelError::NotUtf8)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(raw);
    let header = reader.headers().map_err(|e| LabelError::Csv(e.to_string()))?.clone();
    if header.len() < 3
        || header.get(0) != Some("frame_id")
        || header.get(1) != Some("subject_id")
    {
        return Err(LabelError::BadHeader);
    }
    let au_ids: Vec<AuId> = header.iter().skip(2).map(|h| AuId(h.to_string())).collect();
    let mut table = LabelTable::new(au_ids);
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LabelError::Csv(e.to_string()))?;
        if record.len() != header.len() {
            return Err(LabelError::WrongColumnCount {
                row: i + 2,
                expected: header.len(),
                found: record.len(),
            });
        }
        let frame_id = record[0].to_string();
        let states = record
            .iter()
            .skip(2)
            .zip(table.au_ids.iter())
            .map(|(cell, au)| {
                AuState::from_code(cell).ok_or_else(|| LabelError::UnknownCellValue {
                    frame_id: frame_id.clone(),
                    au: au.0.clone(),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        table.push(LabelRow { frame_id, subject_id: record[1].to_string(), states })?;
    }
    Ok(table)
}

/// Present/absent/unknown tallies for one AU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StateCounts {
    pub present: usize,
    pub absent: usize,
    pub unknown: usize,
}

impl StateCounts {
    pub fn labeled(&self) -> usize {
        self.present + self.absent
    }

    pub fn total(&self) -> usize {
        self.present + self.absent + self.unknown
    }
}

pub fn state_counts(table: &LabelTable) -> Vec<(AuId, StateCounts)> {
    let mut counts = vec![StateCounts::default(); table.au_ids.len()];
    for row in &table.rows {
        for (c, s) in counts.iter_mut().zip(&row.states) {
            match s {
                AuState::Present => c.present += 1,
                AuState::Absent => c.absent += 1,
                AuState::Unknown => c.unknown += 1,
            }
        }
    }
    table.au_ids.iter().cloned().zip(counts).collect()
}

/// Percentage of labeled frames with the AU present, per AU.
///
/// AUs with no labeled frame are left out of the result.
pub fn occurrence_stats(table: &LabelTable) -> Result<Vec<(AuId, f64)>, DatasetError> {
    if table.is_empty() {
        return Err(DatasetError::EmptyTable);
    }
    Ok(state_counts(table)
        .into_iter()
        .filter(|(_, c)| c.labeled() > 0)
        .map(|(au, c)| (au, 100.0 * c.present as f64 / c.labeled() as f64))
        .collect())
}

pub fn stats_csv(stats: &[(AuId, f64)]) -> String {
    let mut out = String::from("au,occurrence_pct\n");
    for (au, pct) in stats {
        out.push_str(&format!("{},{:.2}\n", au.short(), pct));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub subject_id: String,
    pub landmark_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_landmarks: usize,
    pub label_file: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let raw = fs::read(path).map_err(|source| DatasetError::Io { path: path.into(), source })?;
        let mut manifest: DatasetManifest = serde_json::from_slice(&raw).map_err(|e| {
            DatasetError::Manifest { path: path.into(), message: e.to_string() }
        })?;
        if manifest.n_landmarks == 0 {
            return Err(DatasetError::Manifest {
                path: path.into(),
                message: "n_landmarks must be at least 1".into(),
            });
        }
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = HashSet::new();
        for e in &manifest.entries {
            if !seen.insert(e.frame_id.as_str()) {
                return Err(DatasetError::DuplicateEntry(e.frame_id.clone()));
            }
        }
        Ok(manifest)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Label table restricted to the manifest's frames, in manifest order.
    pub fn load_labels(&self) -> Result<LabelTable, DatasetError> {
        let path = self.resolve(&self.label_file);
        let raw = fs::read(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
        let table = parse_label_file(&raw).map_err(|source| DatasetError::Labels { path, source })?;
        let mut joined = LabelTable::new(table.au_ids().to_vec());
        for e in &self.entries {
            let row = table.get(&e.frame_id).ok_or_else(|| DatasetError::MissingLabel(e.frame_id.clone()))?;
            if row.subject_id != e.subject_id {
                return Err(DatasetError::SubjectMismatch {
                    frame_id: e.frame_id.clone(),
                    manifest: e.subject_id.clone(),
                    labels: row.subject_id.clone(),
                });
            }
            joined.push(row.clone()).expect("manifest frame ids are unique");
        }
        Ok(joined)
    }
}

/// Landmarks and labels for every manifest entry, aligned by index.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: Vec<LandmarkSet>,
    pub labels: LabelTable,
}

impl Dataset {
    pub fn au_ids(&self) -> &[AuId] {
        self.labels.au_ids()
    }

    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.frames.iter().map(|f| f.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DatasetError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let labels = manifest.load_labels()?;
    let frames = manifest
        .entries
        .iter()
        .map(|e| {
            let path = manifest.resolve(&e.landmark_file);
            let raw = fs::read(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
            let points = parse_landmark_file(&raw, manifest.n_landmarks)
                .map_err(|source| DatasetError::Landmarks { path, source })?;
            Ok(LandmarkSet { frame_id: e.frame_id.clone(), subject_id: e.subject_id.clone(), points })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(Dataset { frames, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_three_points() {
        let pts = parse_landmark_file(b"0 0 0\n1 2 4\n2 4 8\n", 3).unwrap();
        assert_eq!(pts, vec![[0.0, 0.0, 0.0], [1.0, 2.0, 4.0], [2.0, 4.0, 8.0]]);
    }

    #[test]
    fn parses_83_zero_lines() {
        let raw = "0 0 0\n".repeat(83);
        let pts = parse_landmark_file(raw.as_bytes(), 83).unwrap();
        assert_eq!(pts.len(), 83);
        assert!(pts.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn wrong_count_is_rejected() {
        let raw = "0 0 0\n".repeat(82);
        assert_eq!(
            parse_landmark_file(raw.as_bytes(), 83),
            Err(LandmarkError::WrongCount { expected: 83, found: 82 })
        );
    }

    #[test]
    fn malformed_and_non_finite_lines() {
        assert!(matches!(
            parse_landmark_file(b"0 0 x\n", 1),
            Err(LandmarkError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_landmark_file(b"0 0\n", 1),
            Err(LandmarkError::MalformedLine { .. })
        ));
        assert!(matches!(
            parse_landmark_file(b"0 0 0 0\n", 1),
            Err(LandmarkError::MalformedLine { .. })
        ));
        assert_eq!(parse_landmark_file(b"0 NaN 0\n", 1), Err(LandmarkError::NonFinite { line: 1 }));
        assert_eq!(parse_landmark_file(b"inf 0 0\n", 1), Err(LandmarkError::NonFinite { line: 1 }));
        // blank line in the middle counts as a line and fails to parse
        assert!(matches!(
            parse_landmark_file(b"0 0 0\n\n", 2),
            Err(LandmarkError::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn crlf_is_accepted() {
        let pts = parse_landmark_file(b"1 2 3\r\n4 5 6\r\n", 2).unwrap();
        assert_eq!(pts[1], [4.0, 5.0, 6.0]);
    }

    #[test]
    fn label_rows_parse() {
        let t = parse_label_file(b"frame_id,subject_id,AU01,AU12\nf1,s1,1,0\nf2,s1,9,1\n").unwrap();
        assert_eq!(t.au_ids(), &[AuId("AU01".into()), AuId("AU12".into())]);
        assert_eq!(t.get("f1").unwrap().states, vec![AuState::Present, AuState::Absent]);
        assert_eq!(t.get("f2").unwrap().states, vec![AuState::Unknown, AuState::Present]);
        assert_eq!(t.get("f2").unwrap().subject_id, "s1");
    }

    #[test]
    fn label_errors() {
        assert!(matches!(
            parse_label_file(b"frame_id,subject_id,AU01,AU12\nf3,s1,2,0\n"),
            Err(LabelError::UnknownCellValue { .. })
        ));
        assert_eq!(
            parse_label_file(b"frame_id,subject_id,AU01\nf1,s1,1\nf1,s2,0\n"),
            Err(LabelError::DuplicateFrame("f1".into()))
        );
        assert_eq!(parse_label_file(b"frame,subject,AU01\n"), Err(LabelError::BadHeader));
        assert!(matches!(
            parse_label_file(b"frame_id,subject_id,AU01\nf1,s1\n"),
            Err(LabelError::WrongColumnCount { .. })
        ));
    }

    #[test]
    fn label_csv_round_trip() {
        let raw = "frame_id,subject_id,AU01,AU12\nf1,s1,1,0\nf2,s2,9,1\n";
        let t = parse_label_file(raw.as_bytes()).unwrap();
        assert_eq!(t.to_csv(), raw);
    }

    fn table_with(states: &[AuState]) -> LabelTable {
        let mut t = LabelTable::new(vec![AuId::from_number(12)]);
        for (i, s) in states.iter().enumerate() {
            t.push(LabelRow { frame_id: format!("f{i}"), subject_id: "s".into(), states: vec![*s] })
                .unwrap();
        }
        t
    }

    #[test]
    fn occurrence_counts_by_hand() {
        use AuState::*;
        let t = table_with(&[Present, Present, Absent, Present]);
        let s = occurrence_stats(&t).unwrap();
        assert_eq!(s, vec![(AuId::from_number(12), 75.0)]);
    }

    #[test]
    fn all_unknown_au_is_omitted() {
        let mut t = LabelTable::new(vec![AuId::from_number(12), AuId::from_number(17)]);
        for i in 0..3 {
            t.push(LabelRow {
                frame_id: format!("f{i}"),
                subject_id: "s".into(),
                states: vec![AuState::Present, AuState::Unknown],
            })
            .unwrap();
        }
        let s = occurrence_stats(&t).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, AuId::from_number(12));
    }

    #[test]
    fn empty_table_errors() {
        let t = LabelTable::new(vec![AuId::from_number(1)]);
        assert!(matches!(occurrence_stats(&t), Err(DatasetError::EmptyTable)));
    }

    #[test]
    fn bp4d_au12_rate() {
        let states: Vec<AuState> =
            (0..10_000).map(|i| if i < 5618 { AuState::Present } else { AuState::Absent }).collect();
        let s = occurrence_stats(&table_with(&states)).unwrap();
        assert!((s[0].1 - 56.18).abs() < 1e-9);
        assert_eq!(stats_csv(&s), "au,occurrence_pct\n12,56.18\n");
    }

    #[test]
    fn au_id_short_labels() {
        assert_eq!(AuId("AU01".into()).short(), "1");
        assert_eq!(AuId::from_number(24).short(), "24");
        assert_eq!(AuId("smile".into()).short(), "smile");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn finite() -> impl Strategy<Value = f64> {
            prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
        }

        proptest! {
            #[test]
            fn landmark_text_round_trips_bit_exactly(
                pts in prop::collection::vec([finite(), finite(), finite()], 1..40)
            ) {
                let text = write_landmark_file(&pts);
                let back = parse_landmark_file(text.as_bytes(), pts.len()).unwrap();
                for (a, b) in pts.iter().zip(&back) {
                    for k in 0..3 {
                        prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
                    }
                }
            }

            #[test]
            fn stats_are_permutation_invariant_and_bounded(
                codes in prop::collection::vec(0u8..3, 1..60),
                rot in 0usize..60,
            ) {
                let states: Vec<AuState> = codes.iter().map(|c| match c {
                    0 => AuState::Absent, 1 => AuState::Present, _ => AuState::Unknown,
                }).collect();
                let mut rotated = states.clone();
                let r = rot % states.len();
                rotated.rotate_left(r);
                rotated.reverse();
                let a = table_with(&states);
                let b = table_with(&rotated);
                prop_assert_eq!(occurrence_stats(&a).unwrap(), occurrence_stats(&b).unwrap());
                for (_, c) in state_counts(&a) {
                    prop_assert_eq!(c.total(), states.len());
                }
                for (_, pct) in occurrence_stats(&a).unwrap() {
                    prop_assert!((0.0..=100.0).contains(&pct));
                }
            }
        }
    }
}
