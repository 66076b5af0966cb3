//! Line-delimited observable log (`.obs.jsonl`) and verdict log.
//!
//! One JSON object per line, fields in a fixed order:
//!
//! ```text
//! {"t":12.0,"agc_db":29.87,"cno":{"G02":44.9,"G05":41.2},"lost":["G15"]}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("record {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LogError>;

/// GPS space vehicle identifier, written `G07`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SatId(pub u8);

impl fmt::Display for SatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{:02}", self.0)
    }
}

impl FromStr for SatId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let digits = s.strip_prefix('G').ok_or_else(|| format!("satellite id {s:?} must start with 'G'"))?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("satellite id {s:?} must be 'G' followed by digits"));
        }
        digits.parse::<u8>().map(SatId).map_err(|_| format!("satellite number in {s:?} exceeds 255"))
    }
}

impl Serialize for SatId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SatId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One reporting epoch: AGC gain plus per-satellite C/N0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ObservableEpoch {
    /// Scenario time in seconds.
    pub t: f64,
    /// AGC gain in dB; absent when the receiver did not report it.
    pub agc_db: Option<f64>,
    /// C/N0 in dB-Hz per tracked satellite.
    pub cno: BTreeMap<SatId, f64>,
    /// Satellites known to have lost lock this epoch.
    pub lost: Vec<SatId>,
}

pub const CNO_RANGE_DBHZ: (f64, f64) = (0.0, 60.0);

impl ObservableEpoch {
    pub fn new(t: f64) -> Self {
        Self { t, ..Default::default() }
    }

    /// Rounds values to what the binary frames can carry: C/N0 to 0.1 dB-Hz,
    /// AGC to single precision.
    pub fn to_wire_precision(&self) -> Self {
        Self {
            t: self.t,
            agc_db: self.agc_db.map(|g| g as f32 as f64),
            cno: self.cno.iter().map(|(s, c)| (*s, quantize_cno(*c))).collect(),
            lost: self.lost.clone(),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(format!("time {} must be finite and nonnegative", self.t));
        }
        if let Some(g) = self.agc_db {
            if !g.is_finite() {
                return Err("AGC value is not finite".into());
            }
        }
        for (sat, c) in &self.cno {
            if !(c.is_finite() && (CNO_RANGE_DBHZ.0..=CNO_RANGE_DBHZ.1).contains(c)) {
                return Err(format!("C/N0 {c} of {sat} outside [0, 60] dB-Hz"));
            }
        }
        Ok(())
    }
}

pub(crate) fn quantize_cno(c: f64) -> f64 {
    (c * 10.0).round() / 10.0
}

/// Checks that epochs are valid and strictly increasing in time.
pub fn validate_epochs(epochs: &[ObservableEpoch]) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for (index, e) in epochs.iter().enumerate() {
        e.check().map_err(|reason| LogError::Invalid { index, reason })?;
        if e.t <= prev {
            return Err(LogError::Invalid {
                index,
                reason: format!("time {} does not increase (previous {prev})", e.t),
            });
        }
        prev = e.t;
    }
    Ok(())
}

/// Writes one JSON record per line; returns the byte count.
pub fn write_jsonl<T: Serialize, W: Write>(records: &[T], mut out: W) -> Result<usize> {
    let mut written = 0;
    for r in records {
        let mut line = serde_json::to_vec(r).map_err(std::io::Error::other)?;
        line.push(b'\n');
        out.write_all(&line)?;
        written += line.len();
    }
    out.flush()?;
    Ok(written)
}

/// Parses one JSON record per line. Blank lines and malformed records are
/// errors carrying their 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            return Err(LogError::Parse { line: n, reason: "empty record".into() });
        }
        let rec =
            serde_json::from_str(&line).map_err(|e| LogError::Parse { line: n, reason: e.to_string() })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_observable_log<W: Write>(epochs: &[ObservableEpoch], out: W) -> Result<usize> {
    validate_epochs(epochs)?;
    write_jsonl(epochs, out)
}

pub fn parse_observable_log<R: BufRead>(input: R) -> Result<Vec<ObservableEpoch>> {
    let epochs: Vec<ObservableEpoch> = parse_jsonl(input)?;
    validate_epochs(&epochs).map_err(|e| match e {
        LogError::Invalid { index, reason } => LogError::Parse { line: index + 1, reason },
        other => other,
    })?;
    Ok(epochs)
}
