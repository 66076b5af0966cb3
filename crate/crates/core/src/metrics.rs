//! Scoring of detector flag streams against ground-truth jamming intervals.
//!
//! Two levels are reported side by side: interval level (an interval counts
//! as detected when any of its epochs is flagged) and epoch level (a
//! confusion matrix over all scored epochs).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::waveform::{JamInterval, JammingSchedule};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("flag at index {index} (t = {t} s) is earlier than its predecessor")]
    UnsortedFlags { index: usize, t: f64 },
    #[error("ground truth has no intervals")]
    EmptyTruth,
    #[error("invalid ground truth: {0}")]
    InvalidTruth(String),
    #[error("reports were scored against different ground truths")]
    TruthMismatch,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Jamming intervals and the epoch period of the flag streams scored
/// against them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TruthFile", into = "TruthFile")]
pub struct GroundTruth {
    pub epoch_period_s: f64,
    pub schedule: JammingSchedule,
}

/// On-disk form of [`GroundTruth`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    epoch_period_s: f64,
    intervals: Vec<JamInterval>,
}

impl TryFrom<TruthFile> for GroundTruth {
    type Error = MetricsError;

    fn try_from(f: TruthFile) -> Result<Self> {
        let schedule =
            JammingSchedule::new(f.intervals).map_err(|e| MetricsError::InvalidTruth(e.to_string()))?;
        GroundTruth::new(schedule, f.epoch_period_s)
    }
}

impl From<GroundTruth> for TruthFile {
    fn from(g: GroundTruth) -> Self {
        TruthFile { epoch_period_s: g.epoch_period_s, intervals: g.schedule.intervals().to_vec() }
    }
}

impl GroundTruth {
    pub fn new(schedule: JammingSchedule, epoch_period_s: f64) -> Result<Self> {
        if !(epoch_period_s.is_finite() && epoch_period_s > 0.0) {
            return Err(MetricsError::InvalidTruth(format!(
                "epoch period must be positive, got {epoch_period_s}"
            )));
        }
        Ok(Self { epoch_period_s, schedule })
    }

    /// Stable identifier of this truth, used to refuse comparing reports
    /// scored against different truths.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.epoch_period_s.to_le_bytes());
        for iv in self.schedule.intervals() {
            h.update(iv.start_s.to_le_bytes());
            h.update(iv.end_s.to_le_bytes());
            h.update(iv.jnr_db.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    fn in_guard(&self, t: f64, guard: f64) -> bool {
        guard > 0.0
            && self.schedule.intervals().iter().any(|iv| {
                (t >= iv.start_s - guard && t < iv.start_s) || (t >= iv.end_s && t < iv.end_s + guard)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Per-interval epoch counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalScore {
    pub jnr_db: f64,
    pub epochs: usize,
    pub flagged: usize,
}

impl IntervalScore {
    pub fn detected(&self) -> bool {
        self.flagged > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub intervals_detected: usize,
    pub intervals_total: usize,
    /// TP / (TP + FN).
    pub detection_probability: f64,
    /// Unflagged jammed epochs inside detected intervals, over all jammed
    /// epochs.
    pub missed_detection_rate: f64,
    /// FN / (TP + FN), i.e. 1 − detection probability.
    pub epoch_miss_rate: f64,
    /// FP / (TP + FP): share of raised flags that were wrong.
    pub false_alarm_rate: f64,
    /// FP / (FP + TN): share of clean epochs flagged.
    pub false_alarm_density: f64,
    pub confusion: Confusion,
    /// Clean epochs dropped from scoring by the guard band.
    pub excluded_epochs: usize,
    pub guard_band_s: f64,
    pub per_interval: Vec<IntervalScore>,
    pub truth_fingerprint: String,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores a `(t, flag)` stream. Entries falling in the same epoch period are
/// merged (flagged if any entry is). Clean epochs within `guard_band_s` of an
/// interval edge are not scored. Only epochs present in the stream count.
pub fn evaluate(flags: &[(f64, bool)], truth: &GroundTruth, guard_band_s: f64) -> Result<MetricsReport> {
    if truth.schedule.is_empty() {
        return Err(MetricsError::EmptyTruth);
    }
    let period = truth.epoch_period_s;
    let mut epochs: Vec<(i64, bool)> = Vec::with_capacity(flags.len());
    let mut prev = f64::NEG_INFINITY;
    for (index, &(t, flag)) in flags.iter().enumerate() {
        if t.is_nan() || t < prev {
            return Err(MetricsError::UnsortedFlags { index, t });
        }
        prev = t;
        let k = (t / period + 1e-9).floor() as i64;
        match epochs.last_mut() {
            Some((last, f)) if *last == k => *f |= flag,
            _ => epochs.push((k, flag)),
        }
    }

    let ivs = truth.schedule.intervals();
    let mut per_interval: Vec<IntervalScore> =
        ivs.iter().map(|iv| IntervalScore { jnr_db: iv.jnr_db, epochs: 0, flagged: 0 }).collect();
    let mut c = Confusion::default();
    let mut excluded = 0;
    for &(k, flag) in &epochs {
        let t = k as f64 * period;
        match truth.schedule.interval_at(t) {
            Some(i) => {
                per_interval[i].epochs += 1;
                if flag {
                    per_interval[i].flagged += 1;
                    c.tp += 1;
                } else {
                    c.fn_ += 1;
                }
            }
            None if truth.in_guard(t, guard_band_s) => excluded += 1,
            None if flag => c.fp += 1,
            None => c.tn += 1,
        }
    }

    let detected = per_interval.iter().filter(|s| s.detected()).count();
    let missed_in_detected: usize =
        per_interval.iter().filter(|s| s.detected()).map(|s| s.epochs - s.flagged).sum();
    let jammed = c.tp + c.fn_;
    Ok(MetricsReport {
        intervals_detected: detected,
        intervals_total: ivs.len(),
        detection_probability: ratio(c.tp, jammed),
        missed_detection_rate: ratio(missed_in_detected, jammed),
        epoch_miss_rate: ratio(c.fn_, jammed),
        false_alarm_rate: ratio(c.fp, c.tp + c.fp),
        false_alarm_density: ratio(c.fp, c.fp + c.tn),
        confusion: c,
        excluded_epochs: excluded,
        guard_band_s,
        per_interval,
        truth_fingerprint: truth.fingerprint(),
    })
}

impl MetricsReport {
    /// Flat `key = value` text form.
    pub fn to_key_values(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("intervals_detected", self.intervals_detected.to_string());
        kv("intervals_total", self.intervals_total.to_string());
        kv("detection_probability", format!("{:.6}", self.detection_probability));
        kv("missed_detection_rate", format!("{:.6}", self.missed_detection_rate));
        kv("epoch_miss_rate", format!("{:.6}", self.epoch_miss_rate));
        kv("false_alarm_rate", format!("{:.6}", self.false_alarm_rate));
        kv("false_alarm_density", format!("{:.6}", self.false_alarm_density));
        kv("tp", c.tp.to_string());
        kv("fp", c.fp.to_string());
        kv("fn", c.fn_.to_string());
        kv("tn", c.tn.to_string());
        kv("excluded_epochs", self.excluded_epochs.to_string());
        kv("guard_band_s", self.guard_band_s.to_string());
        kv("truth_fingerprint", self.truth_fingerprint.clone());
        s
    }
}

/// One row of the side-by-side summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: &'static str,
    pub a: String,
    pub b: String,
    /// a − b in the row's natural unit (intervals, or percentage points).
    pub delta: f64,
    pub higher_is_better: bool,
}

impl ComparisonRow {
    /// Whether column a is at least as good as column b on this row.
    pub fn a_not_worse(&self) -> bool {
        if self.higher_is_better {
            self.delta >= 0.0
        } else {
            self.delta <= 0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub name_a: String,
    pub name_b: String,
    pub rows: Vec<ComparisonRow>,
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Detection summary of two detectors scored against the same truth.
pub fn compare(name_a: &str, a: &MetricsReport, name_b: &str, b: &MetricsReport) -> Result<ComparisonTable> {
    if a.truth_fingerprint != b.truth_fingerprint || a.intervals_total != b.intervals_total {
        return Err(MetricsError::TruthMismatch);
    }
    let rate_row = |label, x: f64, y: f64, higher_is_better| ComparisonRow {
        label,
        a: pct(x),
        b: pct(y),
        delta: 100.0 * (x - y),
        higher_is_better,
    };
    let rows = vec![
        ComparisonRow {
            label: "Interference detected intervals",
            a: format!("{}/{}", a.intervals_detected, a.intervals_total),
            b: format!("{}/{}", b.intervals_detected, b.intervals_total),
            delta: a.intervals_detected as f64 - b.intervals_detected as f64,
            higher_is_better: true,
        },
        rate_row("Detection probability", a.detection_probability, b.detection_probability, true),
        rate_row("Missed detection rate", a.missed_detection_rate, b.missed_detection_rate, false),
        rate_row("False alarm rate", a.false_alarm_rate, b.false_alarm_rate, false),
    ];
    Ok(ComparisonTable { name_a: name_a.to_string(), name_b: name_b.to_string(), rows })
}

impl ComparisonTable {
    pub fn render(&self) -> String {
        let w0 = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0);
        let w1 = self.rows.iter().map(|r| r.a.len()).chain([self.name_a.len()]).max().unwrap_or(0);
        let w2 = self.rows.iter().map(|r| r.b.len()).chain([self.name_b.len()]).max().unwrap_or(0);
        let mut out = format!("{:<w0$}  {:>w1$}  {:>w2$}  {:>8}\n", "", self.name_a, self.name_b, "delta");
        for r in &self.rows {
            out.push_str(&format!("{:<w0$}  {:>w1$}  {:>w2$}  {:>+8.1}\n", r.label, r.a, r.b, r.delta));
        }
        out
    }
}
