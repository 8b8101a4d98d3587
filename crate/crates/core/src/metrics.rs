//! Confusion counts, F1 variants and report emission.

use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::landmark_io::AuState;
use crate::neuralnet::THREE_CLASSES;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Actual positives.
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |mut a, b| {
            a += b;
            a
        })
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `2RP / (R + P)`; 0 when precision, recall or their sum is undefined or zero.
pub fn f1_frame(c: &ConfusionCounts) -> f64 {
    if c.tp + c.fp == 0 || c.tp + c.fn_ == 0 {
        return 0.0;
    }
    let (p, r) = (c.precision(), c.recall());
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * r * p / (r + p)
    }
}

/// Class index of an AU state: absent 0, unknown 1, present 2.
pub fn class_index(state: AuState) -> usize {
    match state {
        AuState::Absent => 0,
        AuState::Unknown => 1,
        AuState::Present => 2,
    }
}

/// One-vs-rest counts for each of the three classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub per_class: [ConfusionCounts; THREE_CLASSES],
}

impl ClassCounts {
    pub fn add(&mut self, predicted: usize, actual: usize) {
        for (k, c) in self.per_class.iter_mut().enumerate() {
            c.add(predicted == k, actual == k);
        }
    }

    pub fn class_f1(&self) -> [f64; THREE_CLASSES] {
        self.per_class.map(|c| f1_frame(&c))
    }
}

impl AddAssign for ClassCounts {
    fn add_assign(&mut self, o: Self) {
        for (a, b) in self.per_class.iter_mut().zip(o.per_class) {
            *a += b;
        }
    }
}

/// Unweighted mean of the three class F1 scores.
pub fn f1_macro_3class(c: &ClassCounts) -> f64 {
    c.class_f1().iter().sum::<f64>() / THREE_CLASSES as f64
}

/// Support-weighted mean of the three class F1 scores.
pub fn f1_micro_3class(c: &ClassCounts) -> f64 {
    let total: u64 = c.per_class.iter().map(|k| k.support()).sum();
    if total == 0 {
        return 0.0;
    }
    c.per_class.iter().map(|k| f1_frame(k) * k.support() as f64).sum::<f64>() / total as f64
}

/// F1 of the counts pooled over classes (micro averaging in the usual sense).
pub fn f1_micro_pooled(c: &ClassCounts) -> f64 {
    f1_frame(&c.per_class.iter().copied().sum())
}

/// Index of the largest probability; the first one wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Streaming per-AU binary counts. Unknown labels are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryAccumulator {
    pub threshold: f64,
    pub counts: Vec<ConfusionCounts>,
}

impl BinaryAccumulator {
    pub fn new(au_count: usize, threshold: f64) -> Self {
        BinaryAccumulator { threshold, counts: vec![ConfusionCounts::default(); au_count] }
    }

    /// `probs[a]` is the predicted probability that AU `a` is present.
    pub fn add_frame(&mut self, probs: &[f64], labels: &[AuState]) {
        for ((c, &p), &l) in self.counts.iter_mut().zip(probs).zip(labels) {
            match l {
                AuState::Unknown => {}
                _ => c.add(p >= self.threshold, l == AuState::Present),
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, &b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn f1(&self) -> Vec<f64> {
        self.counts.iter().map(f1_frame).collect()
    }
}

/// Streaming per-AU three-class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeClassAccumulator {
    pub counts: Vec<ClassCounts>,
}

impl ThreeClassAccumulator {
    pub fn new(au_count: usize) -> Self {
        ThreeClassAccumulator { counts: vec![ClassCounts::default(); au_count] }
    }

    /// `probs` holds one 3-vector per AU, concatenated.
    pub fn add_frame(&mut self, probs: &[f64], labels: &[AuState]) {
        for ((c, p), &l) in self.counts.iter_mut().zip(probs.chunks(THREE_CLASSES)).zip(labels) {
            c.add(argmax(p), class_index(l));
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, &b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn macro_f1(&self) -> Vec<f64> {
        self.counts.iter().map(f1_macro_3class).collect()
    }

    pub fn micro_f1(&self) -> Vec<f64> {
        self.counts.iter().map(f1_micro_3class).collect()
    }

    pub fn micro_pooled_f1(&self) -> Vec<f64> {
        self.counts.iter().map(f1_micro_pooled).collect()
    }
}

/// Percent with two decimals. Exact halves round up; representation error
/// below 1e-9 of a hundredth is absorbed first so that 0.94075 prints 94.08.
pub fn percent2(v: f64) -> f64 {
    let hundredths = v * 10_000.0;
    let snapped = (hundredths * 1e9).round() / 1e9;
    (snapped + 0.5).floor() / 100.0
}

fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", percent2(v)),
        None => "-".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?} (expected text, csv or json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// AU number without prefix, e.g. "12".
    pub au: String,
    /// F1 as a fraction per column; `None` prints as "-".
    pub values: Vec<Option<f64>>,
}

/// Per-AU F1 table with an average row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Free-form remarks such as AUs trained without positives.
    pub notes: Vec<String>,
    pub provenance: Value,
}

impl MetricsReport {
    pub fn new(experiment: impl Into<String>, columns: &[&str]) -> Self {
        MetricsReport {
            experiment: experiment.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
            provenance: Value::Null,
        }
    }

    pub fn push_row(&mut self, au: impl Into<String>, values: Vec<Option<f64>>) {
        assert_eq!(values.len(), self.columns.len(), "row width differs from columns");
        self.rows.push(ReportRow { au: au.into(), values });
    }

    /// Column means over the rows that have a value.
    pub fn averages(&self) -> Vec<Option<f64>> {
        (0..self.columns.len())
            .map(|j| {
                let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.values[j]).collect();
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            })
            .collect()
    }

    fn comment_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("experiment: {}", self.experiment)];
        lines.extend(self.notes.iter().map(|n| format!("note: {n}")));
        if !self.provenance.is_null() {
            lines.push(format!("provenance: {}", self.provenance));
        }
        lines
    }

    pub fn emit(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.emit_text(),
            ReportFormat::Csv => self.emit_csv(),
            ReportFormat::Json => self.emit_json(),
        }
    }

    fn emit_text(&self) -> String {
        let mut s = String::new();
        for l in self.comment_lines() {
            let _ = writeln!(s, "# {l}");
        }
        let _ = writeln!(s, "AU, {}", self.columns.join(", "));
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|&v| fmt_pct(v)).collect();
            let _ = writeln!(s, "{}, {}", r.au, vals.join(", "));
        }
        let avg: Vec<String> = self.averages().into_iter().map(fmt_pct).collect();
        let _ = writeln!(s, "Avg, {}", avg.join(", "));
        s
    }

    fn emit_csv(&self) -> String {
        let mut s = String::new();
        for l in self.comment_lines() {
            let _ = writeln!(s, "# {l}");
        }
        let _ = writeln!(s, "au,{}", self.columns.join(","));
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|&v| fmt_pct(v)).collect();
            let _ = writeln!(s, "{},{}", r.au, vals.join(","));
        }
        let avg: Vec<String> = self.averages().into_iter().map(fmt_pct).collect();
        let _ = writeln!(s, "avg,{}", avg.join(","));
        s
    }

    fn emit_json(&self) -> String {
        let cell = |v: Option<f64>| v.map_or(Value::Null, |v| json!(percent2(v)));
        let row = |au: &str, vals: &[Option<f64>]| {
            let mut m = Map::new();
            m.insert("au".into(), json!(au));
            for (c, &v) in self.columns.iter().zip(vals) {
                m.insert(c.clone(), cell(v));
            }
            Value::Object(m)
        };
        let rows: Vec<Value> = self.rows.iter().map(|r| row(&r.au, &r.values)).collect();
        let doc = json!({
            "experiment": self.experiment,
            "columns": self.columns,
            "rows": rows,
            "avg": row("avg", &self.averages()),
            "notes": self.notes,
            "provenance": self.provenance,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn f1_examples() {
        assert!((f1_frame(&counts(3, 1, 2, 0)) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_frame(&counts(0, 0, 5, 1)), 0.0);
        assert_eq!(f1_frame(&counts(0, 3, 0, 1)), 0.0);
        assert_eq!(f1_frame(&counts(0, 3, 4, 1)), 0.0);
        // P = R = 0.8
        assert!((f1_frame(&counts(4, 1, 1, 0)) - 0.8).abs() < 1e-12);
        assert_eq!(f1_frame(&counts(5, 0, 0, 2)), 1.0);
    }

    fn class_counts_with_f1(f: [f64; 3], supports: [u64; 3]) -> ClassCounts {
        // each class: perfect (f=1) or never predicted (f=0) for these tests
        let mut c = ClassCounts::default();
        for k in 0..3 {
            c.per_class[k] = if f[k] == 1.0 { counts(supports[k], 0, 0, 0) } else { counts(0, 0, supports[k], 0) };
        }
        c
    }

    #[test]
    fn three_class_examples() {
        let c = class_counts_with_f1([1.0, 0.0, 0.0], [8, 1, 1]);
        assert!((f1_micro_3class(&c) - 0.8).abs() < 1e-12);
        assert!((f1_macro_3class(&c) - 1.0 / 3.0).abs() < 1e-12);
        // class F1s (1, 0.5, 0)
        let c = ClassCounts { per_class: [counts(2, 0, 0, 0), counts(1, 1, 1, 0), counts(0, 0, 2, 0)] };
        assert!((f1_macro_3class(&c) - 0.5).abs() < 1e-12);
        // equal supports: micro = macro
        let c = ClassCounts { per_class: [counts(2, 1, 0, 0), counts(1, 0, 1, 0), counts(2, 0, 0, 0)] };
        assert!((f1_micro_3class(&c) - f1_macro_3class(&c)).abs() < 1e-12);
        // single class only
        let c = ClassCounts { per_class: [counts(3, 0, 1, 0), counts(0, 1, 0, 0), counts(0, 0, 0, 0)] };
        assert!((f1_micro_3class(&c) - f1_frame(&c.per_class[0])).abs() < 1e-12);
        assert_eq!(f1_micro_3class(&ClassCounts::default()), 0.0);
    }

    #[test]
    fn accumulators_skip_unknown_and_merge() {
        use AuState::*;
        let mut a = BinaryAccumulator::new(2, 0.5);
        a.add_frame(&[0.9, 0.5], &[Present, Unknown]);
        a.add_frame(&[0.2, 0.5], &[Present, Absent]);
        assert_eq!(a.counts[0], counts(1, 0, 1, 0));
        assert_eq!(a.counts[1], counts(0, 1, 0, 0));
        let mut b = a.clone();
        b.merge(&a);
        assert_eq!(b.counts[0], counts(2, 0, 2, 0));

        let mut t = ThreeClassAccumulator::new(1);
        t.add_frame(&[0.1, 0.2, 0.7], &[Present]);
        t.add_frame(&[0.4, 0.4, 0.2], &[Unknown]);
        assert_eq!(t.counts[0].per_class[2], counts(1, 0, 0, 1));
        assert_eq!(t.counts[0].per_class[0], counts(0, 1, 0, 1));
        assert_eq!(t.counts[0].per_class[1], counts(0, 0, 1, 1));
    }

    #[test]
    fn rounding_of_percentages() {
        assert_eq!(percent2(0.9789), 97.89);
        assert_eq!(percent2(0.94075), 94.08);
        assert_eq!(percent2(0.92895833), 92.90);
        assert_eq!(percent2(0.0), 0.0);
        assert_eq!(percent2(1.0), 100.0);
    }

    fn table_two() -> MetricsReport {
        let mut r = MetricsReport::new("binary", &["f1_3fold", "f1_10fold"]);
        let rows = [
            ("1", 0.9116, 0.9268),
            ("2", 0.9031, 0.9211),
            ("4", 0.9312, 0.9414),
            ("6", 0.9624, 0.9701),
            ("7", 0.9640, 0.9698),
            ("10", 0.9759, 0.9795),
            ("12", 0.9789, 0.9831),
            ("14", 0.9547, 0.9629),
            ("15", 0.8763, 0.8966),
            ("17", 0.9114, 0.9235),
            ("23", 0.8587, 0.8823),
            ("24", 0.9193, 0.9319),
        ];
        for (au, a, b) in rows {
            r.push_row(au, vec![Some(a), Some(b)]);
        }
        r
    }

    #[test]
    fn text_layout_matches_reference_table() {
        let text = table_two().emit(ReportFormat::Text);
        assert!(text.contains("\n12, 97.89, 98.31\n"));
        assert!(text.ends_with("Avg, 92.90, 94.08\n"), "{text}");
    }

    #[test]
    fn missing_values_and_empty_reports() {
        let mut r = MetricsReport::new("binary", &["f1_3fold", "f1_10fold"]);
        r.push_row("1", vec![Some(0.8278), None]);
        r.push_row("24", vec![None, None]);
        let csv = r.emit(ReportFormat::Csv);
        assert!(csv.contains("\n24,-,-\n"));
        assert!(csv.ends_with("avg,82.78,-\n"));
        let empty = MetricsReport::new("3class", &["f1_macro", "f1_micro"]);
        let text = empty.emit(ReportFormat::Text);
        assert!(text.ends_with("AU, f1_macro, f1_micro\nAvg, -, -\n"), "{text}");
    }

    #[test]
    fn csv_and_json_agree() {
        let mut r = table_two();
        r.provenance = json!({"seed": 7});
        r.notes.push("counts pooled across folds".into());
        let csv = r.emit(ReportFormat::Csv);
        let json: Value = serde_json::from_str(&r.emit(ReportFormat::Json)).unwrap();
        let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
        assert_eq!(lines.next(), Some("au,f1_3fold,f1_10fold"));
        let json_rows: Vec<&Value> = json["rows"].as_array().unwrap().iter().chain([&json["avg"]]).collect();
        for (line, row) in lines.zip(json_rows) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[0], row["au"].as_str().unwrap());
            for (c, name) in cells[1..].iter().zip(["f1_3fold", "f1_10fold"]) {
                assert_eq!(c.parse::<f64>().unwrap(), row[name].as_f64().unwrap());
            }
        }
        assert_eq!(json["provenance"]["seed"], 7);
        assert!(csv.starts_with("# experiment: binary\n# note: counts pooled across folds\n# provenance: "));
    }
}
