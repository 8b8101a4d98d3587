//! Synthetic landmark datasets with known AU displacement structure.
//!
//! A frame is the 83-point template plus the displacement pattern of every
//! active AU, Gaussian noise, and a random translation and uniform scale.
//! AUs labeled unknown are rendered at half intensity, so the unknown state
//! is an ambiguous expression rather than pure label noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landmark_io::{
    write_landmark_file, AuId, AuState, Dataset, DatasetManifest, LabelRow, LabelTable, LandmarkSet,
    ManifestEntry, Point3, DEFAULT_AUS,
};
use crate::rng::Stream;

pub const TEMPLATE_POINTS: usize = 83;

/// Occurrence rates of the twelve default AUs in the BP4D column of the
/// reference statistics table.
pub const BP4D_RATES: [f64; 12] = [
    0.2107, 0.1704, 0.2022, 0.4610, 0.5490, 0.5939, 0.5618, 0.4660, 0.1696, 0.3437, 0.1656, 0.1516,
];

/// BP4D+ rates for the eleven AUs that occur there (AU24 never does).
pub const BP4D_PLUS_RATES: [(u32, f64); 11] = [
    (1, 0.0954),
    (2, 0.0801),
    (4, 0.0067),
    (6, 0.6588),
    (7, 0.0346),
    (10, 0.5737),
    (12, 0.5999),
    (14, 0.3246),
    (15, 0.1296),
    (17, 0.0067),
    (23, 0.0235),
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

// Landmark index layout of the template.
const EYE_L: usize = 0;
const EYE_R: usize = 8;
const BROW_L: usize = 16;
const BROW_R: usize = 26;
const NOSE: usize = 36;
const MOUTH_OUTER: usize = 48;
const MOUTH_INNER: usize = 60;
// contour occupies 68..83

/// Offset that keeps midline points off the x rounding boundary.
const MIDLINE_SHIFT: f64 = 0.013;

fn dome(x: f64, y: f64) -> f64 {
    0.5 * (1.0 - (x / 0.85).powi(2) - y.powi(2)).max(0.0).sqrt()
}

/// Neutral face: eyes 8+8, brows 10+10, nose 12, mouth 12 outer + 8 inner,
/// contour 15. Units are roughly face widths; depth is a dome plus a nose bump.
pub fn template() -> Vec<Point3> {
    let mut pts: Vec<Point3> = Vec::with_capacity(TEMPLATE_POINTS);
    let feature = |x: f64, y: f64, bump: f64| [x + MIDLINE_SHIFT, y, dome(x, y) + bump];
    for side in [-1.0, 1.0] {
        // k=0 outer corner, 1..=3 upper lid, 4 inner corner, 5..=7 lower lid
        for k in 0..8 {
            let th = PI * k as f64 / 4.0;
            let x = side * (0.3 + 0.12 * th.cos());
            pts.push(feature(x, 0.22 + 0.05 * th.sin(), 0.0));
        }
    }
    for side in [-1.0, 1.0] {
        // inner end first
        for i in 0..10 {
            let u = i as f64 / 9.0;
            let x = side * (0.1 + 0.42 * u);
            let y = 0.40 + 0.07 * (1.0 - (2.0 * u - 1.0).powi(2));
            pts.push(feature(x, y, 0.02));
        }
    }
    // nose: bridge 4, tip, nostril arc 7
    for i in 0..4 {
        let t = i as f64 / 4.0;
        pts.push(feature(0.0, 0.25 - 0.3 * t, 0.05 + 0.2 * t));
    }
    pts.push(feature(0.0, -0.08, 0.3));
    for i in 0..7 {
        let th = PI * (1.0 + i as f64 / 6.0);
        pts.push(feature(0.13 * th.cos(), -0.15 + 0.04 * th.sin(), 0.12));
    }
    // mouth outer: k=0 right corner, 1..=5 upper lip, 6 left corner, 7..=11 lower lip
    for k in 0..12 {
        let th = PI * k as f64 / 6.0;
        pts.push(feature(0.25 * th.cos(), -0.45 + 0.1 * th.sin(), 0.03));
    }
    // mouth inner: k=0 right corner, 1..=3 upper, 4 left corner, 5..=7 lower
    for k in 0..8 {
        let th = PI * k as f64 / 4.0;
        pts.push(feature(0.15 * th.cos(), -0.45 + 0.035 * th.sin(), 0.01));
    }
    for i in 0..15 {
        let t = -2.4 + 4.8 * i as f64 / 14.0;
        // the skew moves the chin off the x midline of the symmetric outline
        let (x, y) = (0.7 * t.sin() + 0.01 * t.cos(), -0.85 * t.cos());
        pts.push([x, y, dome(x, y)]);
    }
    debug_assert_eq!(pts.len(), TEMPLATE_POINTS);
    pts
}

/// Largest bounding-box extent of the template.
pub fn face_scale(points: &[Point3]) -> f64 {
    (0..3)
        .map(|a| {
            let lo = points.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Sparse displacement field of one AU: landmark index and unit direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuPattern {
    pub au: u32,
    pub moves: Vec<(usize, Point3)>,
}

fn unit(d: Point3) -> Point3 {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / n, d[1] / n, d[2] / n]
}

/// Moves for mirrored landmark pairs; `d[0]` points away from the midline.
fn mirrored(left: &[usize], right: &[usize], d: Point3) -> Vec<(usize, Point3)> {
    let l = left.iter().map(|&i| (i, unit([-d[0], d[1], d[2]])));
    let r = right.iter().map(|&i| (i, unit(d)));
    l.chain(r).collect()
}

fn same(idx: impl IntoIterator<Item = usize>, d: Point3) -> Vec<(usize, Point3)> {
    idx.into_iter().map(|i| (i, unit(d))).collect()
}

fn offsets(base: usize, ks: &[usize]) -> Vec<usize> {
    ks.iter().map(|k| base + k).collect()
}

fn corners_l() -> [usize; 3] {
    [MOUTH_OUTER + 6, MOUTH_OUTER + 5, MOUTH_OUTER + 7]
}

fn corners_r() -> [usize; 3] {
    [MOUTH_OUTER, MOUTH_OUTER + 1, MOUTH_OUTER + 11]
}

/// Built-in pattern for one of the twelve default AUs. Contour points and the
/// nose tip are never moved, so the normalization extremes stay put.
pub fn builtin_pattern(au: u32) -> Option<AuPattern> {
    let brow_inner = [0, 1, 2, 3, 4];
    let brow_outer = [5, 6, 7, 8, 9];
    let moves = match au {
        1 => mirrored(&offsets(BROW_L, &brow_inner), &offsets(BROW_R, &brow_inner), [-0.1, 1.0, 0.7]),
        2 => mirrored(&offsets(BROW_L, &brow_outer), &offsets(BROW_R, &brow_outer), [0.2, 1.0, 0.7]),
        4 => {
            let all: Vec<usize> = (0..10).collect();
            mirrored(&offsets(BROW_L, &all), &offsets(BROW_R, &all), [-0.5, -0.6, -0.7])
        }
        6 => mirrored(&offsets(EYE_L, &[0, 5, 6, 7]), &offsets(EYE_R, &[0, 5, 6, 7]), [0.2, 0.8, 0.9]),
        7 => {
            let mut m = mirrored(&offsets(EYE_L, &[1, 2, 3]), &offsets(EYE_R, &[1, 2, 3]), [0.0, -0.8, -0.9]);
            m.extend(mirrored(&offsets(EYE_L, &[5, 6, 7]), &offsets(EYE_R, &[5, 6, 7]), [0.0, 0.6, -1.0]));
            m
        }
        10 => {
            let mut m = same(offsets(MOUTH_OUTER, &[1, 2, 3, 4, 5]), [0.0, 1.0, 1.0]);
            m.extend(same(NOSE + 5..NOSE + 12, [0.0, 0.6, 0.8]));
            m
        }
        // 12, 14 and 15 share the lip corners with mutually orthogonal directions.
        12 => mirrored(&corners_l(), &corners_r(), [1.0, 1.0, -0.5]),
        14 => mirrored(&corners_l(), &corners_r(), [-1.0, 0.5, -1.0]),
        15 => mirrored(&corners_l(), &corners_r(), [0.75, -1.5, -1.5]),
        17 => same(offsets(MOUTH_OUTER, &[7, 8, 9, 10, 11]), [0.0, 1.0, 1.0]),
        23 => {
            let mut m = same(offsets(MOUTH_INNER, &[1, 2, 3, 5, 6, 7]), [0.0, 0.0, 1.0]);
            m.extend(mirrored(&[MOUTH_INNER + 4], &[MOUTH_INNER], [-1.0, 0.0, 1.0]));
            m
        }
        // orthogonal to 10 on the upper lip and to 17 on the lower lip
        24 => {
            let mut m = same(offsets(MOUTH_OUTER, &[2, 3, 4]), [0.0, -1.0, 1.0]);
            m.extend(same(offsets(MOUTH_OUTER, &[8, 9, 10]), [0.0, 1.0, -1.0]));
            m
        }
        _ => return None,
    };
    Some(AuPattern { au, moves })
}

fn default_magnitude() -> f64 {
    0.04
}

fn default_scale_range() -> (f64, f64) {
    (50.0, 150.0)
}

fn default_translation() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub subjects: usize,
    pub frames_per_subject: usize,
    /// AU numbers, e.g. `[1, 2, 4]`.
    pub aus: Vec<u32>,
    /// Probability of Present among labeled frames, per AU.
    pub rates: Vec<f64>,
    /// Probability that an AU's label is Unknown (rendered at half intensity).
    #[serde(default)]
    pub unknown_rate: f64,
    /// Displacement length as a fraction of face scale.
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    /// Noise standard deviation as a fraction of face scale.
    pub sigma: f64,
    /// Range of the per-frame uniform scale.
    #[serde(default = "default_scale_range")]
    pub scale_range: (f64, f64),
    /// Per-axis bound of the per-frame translation.
    #[serde(default = "default_translation")]
    pub translation: f64,
    pub seed: u64,
    /// Overrides the built-in patterns when given.
    #[serde(default)]
    pub patterns: Option<Vec<AuPattern>>,
}

impl SynthSpec {
    /// The twelve default AUs at the BP4D rates.
    pub fn bp4d(subjects: usize, frames_per_subject: usize, sigma: f64, seed: u64) -> Self {
        SynthSpec {
            subjects,
            frames_per_subject,
            aus: DEFAULT_AUS.to_vec(),
            rates: BP4D_RATES.to_vec(),
            unknown_rate: 0.0,
            magnitude: default_magnitude(),
            sigma,
            scale_range: default_scale_range(),
            translation: default_translation(),
            seed,
            patterns: None,
        }
    }

    /// The eleven AUs that occur in BP4D+, at its rates.
    pub fn bp4d_plus(subjects: usize, frames_per_subject: usize, sigma: f64, seed: u64) -> Self {
        SynthSpec {
            aus: BP4D_PLUS_RATES.iter().map(|r| r.0).collect(),
            rates: BP4D_PLUS_RATES.iter().map(|r| r.1).collect(),
            ..Self::bp4d(subjects, frames_per_subject, sigma, seed)
        }
    }

    /// Patterns aligned with `aus`.
    pub fn resolved_patterns(&self) -> Result<Vec<AuPattern>, SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let mut out = Vec::with_capacity(self.aus.len());
        for &au in &self.aus {
            let p = match &self.patterns {
                Some(ps) => ps.iter().find(|p| p.au == au).cloned(),
                None => builtin_pattern(au),
            };
            let Some(p) = p else {
                return bad(format!("no displacement pattern for AU{au:02}"));
            };
            if p.moves.is_empty() || p.moves.iter().all(|(_, d)| d.iter().all(|&v| v == 0.0)) {
                return bad(format!("AU{au:02} has an all-zero displacement pattern"));
            }
            if let Some((i, _)) = p.moves.iter().find(|(i, _)| *i >= TEMPLATE_POINTS) {
                return bad(format!("AU{au:02} moves landmark {i}, template has {TEMPLATE_POINTS}"));
            }
            out.push(p);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.subjects == 0 || self.frames_per_subject == 0 {
            return bad("need at least one subject and one frame per subject".into());
        }
        if self.aus.is_empty() {
            return bad("AU list is empty".into());
        }
        if self.rates.len() != self.aus.len() {
            return bad(format!("{} rates for {} AUs", self.rates.len(), self.aus.len()));
        }
        let mut sorted = self.aus.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.aus.len() {
            return bad("AU list has duplicates".into());
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("rate {r} outside [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.unknown_rate) {
            return bad(format!("unknown_rate {} outside [0, 1)", self.unknown_rate));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return bad(format!("magnitude must be positive, got {}", self.magnitude));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("scale_range must satisfy 0 < lo <= hi, got {:?}", self.scale_range));
        }
        if !(self.translation >= 0.0 && self.translation.is_finite()) {
            return bad(format!("translation must be finite and >= 0, got {}", self.translation));
        }
        self.resolved_patterns().map(|_| ())
    }

    pub fn frame_count(&self) -> usize {
        self.subjects * self.frames_per_subject
    }
}

pub fn subject_id(s: usize) -> String {
    format!("s{s:03}")
}

pub fn frame_id(s: usize, f: usize) -> String {
    format!("s{s:03}_f{f:04}")
}

/// Sampled states for one frame, drawn from `stream` in AU order.
fn sample_states(spec: &SynthSpec, rng: &mut Stream) -> Vec<AuState> {
    spec.rates
        .iter()
        .map(|&rate| {
            let (u, v) = (rng.uniform(), rng.uniform());
            if u < spec.unknown_rate {
                AuState::Unknown
            } else if v < rate {
                AuState::Present
            } else {
                AuState::Absent
            }
        })
        .collect()
}

/// Template plus the displacements of `states` (half intensity for Unknown), before noise.
pub fn expression(states: &[AuState], patterns: &[AuPattern], magnitude: f64) -> Vec<Point3> {
    let mut pts = template();
    let m = magnitude * face_scale(&pts);
    for (state, pattern) in states.iter().zip(patterns) {
        let intensity = match state {
            AuState::Present => 1.0,
            AuState::Unknown => 0.5,
            AuState::Absent => continue,
        };
        for &(i, d) in &pattern.moves {
            for a in 0..3 {
                pts[i][a] += intensity * m * d[a];
            }
        }
    }
    pts
}

/// One frame; its random stream depends only on `(seed, index)`.
fn generate_frame(spec: &SynthSpec, patterns: &[AuPattern], index: usize) -> (Vec<Point3>, Vec<AuState>) {
    let mut rng = Stream::derived(spec.seed, index as u64);
    let states = sample_states(spec, &mut rng);
    let mut pts = expression(&states, patterns, spec.magnitude);
    let noise = spec.sigma * face_scale(&template());
    let (lo, hi) = spec.scale_range;
    let s = rng.uniform_range(lo, hi);
    let t = [0; 3].map(|_| rng.uniform_range(-spec.translation, spec.translation));
    for p in pts.iter_mut() {
        for a in 0..3 {
            let n = if noise > 0.0 { noise * rng.normal() } else { 0.0 };
            p[a] = (p[a] + n) * s + t[a];
        }
    }
    (pts, states)
}

/// Generate every frame and its labels. Frames are ordered subject-major.
pub fn generate(spec: &SynthSpec) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let patterns = spec.resolved_patterns()?;
    let au_ids: Vec<AuId> = spec.aus.iter().map(|&n| AuId::from_number(n)).collect();
    let mut labels = LabelTable::new(au_ids);
    let mut frames = Vec::with_capacity(spec.frame_count());
    for s in 0..spec.subjects {
        for f in 0..spec.frames_per_subject {
            let index = s * spec.frames_per_subject + f;
            let (points, states) = generate_frame(spec, &patterns, index);
            let (fid, sid) = (frame_id(s, f), subject_id(s));
            labels
                .push(LabelRow { frame_id: fid.clone(), subject_id: sid.clone(), states })
                .expect("generated frame ids are unique");
            frames.push(LandmarkSet { frame_id: fid, subject_id: sid, points });
        }
    }
    Ok(Dataset { frames, labels })
}

/// Write `manifest.json`, `labels.csv` and `landmarks/<frame_id>.txt` under
/// `dir`; returns the manifest path. Paths inside the manifest are relative.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let lm_dir = dir.join("landmarks");
    fs::create_dir_all(&lm_dir).map_err(io(&lm_dir))?;
    let mut entries = Vec::with_capacity(dataset.frames.len());
    for f in &dataset.frames {
        let rel = PathBuf::from("landmarks").join(format!("{}.txt", f.frame_id));
        let path = dir.join(&rel);
        fs::write(&path, write_landmark_file(&f.points)).map_err(io(&path))?;
        entries.push(ManifestEntry {
            frame_id: f.frame_id.clone(),
            subject_id: f.subject_id.clone(),
            landmark_file: rel,
        });
    }
    let label_path = dir.join("labels.csv");
    fs::write(&label_path, dataset.labels.to_csv()).map_err(io(&label_path))?;
    let manifest = DatasetManifest {
        n_landmarks: dataset.frames.first().map_or(TEMPLATE_POINTS, |f| f.points.len()),
        label_file: PathBuf::from("labels.csv"),
        entries,
        base_dir: dir.to_path_buf(),
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, manifest.to_json()).map_err(io(&manifest_path))?;
    Ok(manifest_path)
}
