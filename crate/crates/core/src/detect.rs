//! AGC-threshold and multi-satellite C/N0-drop interference detectors.
//!
//! Calibration windows are chosen by the caller. Nothing in here decides
//! which data is interference-free.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{ObservableEpoch, SatId};
use crate::par::{self, Execution};

/// Fewest interference-free samples accepted for a reference.
pub const MIN_CALIBRATION_SAMPLES: usize = 30;
/// Default AGC drop margin, dB.
pub const DEFAULT_T_DROP_DB: f64 = 2.0;
/// Default C/N0 drop below reference that counts a satellite as dropping, dB.
pub const DEFAULT_CNO_DROP_DB: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("insufficient calibration data: {got} samples, need {need}")]
    InsufficientCalibration { got: usize, need: usize },
    #[error("no satellite has enough calibration samples")]
    NoSatellites,
    #[error("epoch at t = {t} s lacks the {what} observable")]
    MissingObservable { t: f64, what: &'static str },
    #[error("invalid detector parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, DetectError>;

/// Reference statistics of interference-free AGC readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgcCalibration {
    pub mu_ref: f64,
    pub sigma_ref: f64,
    pub t_drop: f64,
    /// `mu_ref − 3·sigma_ref − t_drop`.
    pub threshold: f64,
    pub samples: usize,
}

/// Mean, population standard deviation and threshold of clean AGC samples.
pub fn calibrate_agc(samples: &[f64], t_drop: f64) -> Result<AgcCalibration> {
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(DetectError::InsufficientCalibration {
            got: samples.len(),
            need: MIN_CALIBRATION_SAMPLES,
        });
    }
    if !(t_drop.is_finite() && t_drop >= 0.0) {
        return Err(DetectError::InvalidParameter(format!("t_drop must be nonnegative, got {t_drop}")));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let sigma = (samples.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mu - 3.0 * sigma - t_drop;
    if threshold.is_nan() || threshold >= mu {
        return Err(DetectError::InvalidParameter(
            "threshold must lie below the reference mean; use t_drop > 0 for constant data".into(),
        ));
    }
    Ok(AgcCalibration { mu_ref: mu, sigma_ref: sigma, t_drop, threshold, samples: samples.len() })
}

/// AGC detector outcome with its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgcDecision {
    pub flag: bool,
    pub value: f64,
    pub threshold: f64,
}

/// Flags when the AGC gain falls strictly below the threshold.
pub fn agc_detect(epoch: &ObservableEpoch, cal: &AgcCalibration) -> Result<AgcDecision> {
    let value = epoch.agc_db.ok_or(DetectError::MissingObservable { t: epoch.t, what: "AGC" })?;
    Ok(AgcDecision { flag: value < cal.threshold, value, threshold: cal.threshold })
}

/// Per-satellite C/N0 references and the quorum rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnoCalibration {
    pub per_sat_ref: BTreeMap<SatId, f64>,
    pub drop_threshold: f64,
    pub min_sats: usize,
    /// Satellites left out for lack of samples, with their sample counts.
    #[serde(default)]
    pub excluded: Vec<(SatId, usize)>,
}

/// `min(4, ⌈n/2⌉)` for a constellation of `n` calibrated satellites.
pub fn default_min_sats(n_calibrated: usize) -> usize {
    4.min(n_calibrated.div_ceil(2)).max(1)
}

/// Reference C/N0 per satellite: the mean over the window. Satellites seen
/// in fewer than [`MIN_CALIBRATION_SAMPLES`] epochs are excluded and listed.
/// Satellites never seen do not appear at all.
pub fn calibrate_cno(
    epochs: &[ObservableEpoch],
    drop_threshold: f64,
    min_sats: Option<usize>,
) -> Result<CnoCalibration> {
    if !(drop_threshold.is_finite() && drop_threshold > 0.0) {
        return Err(DetectError::InvalidParameter(format!(
            "drop threshold must be positive, got {drop_threshold}"
        )));
    }
    if min_sats == Some(0) {
        return Err(DetectError::InvalidParameter("min_sats must be at least 1".into()));
    }
    let mut acc: BTreeMap<SatId, (f64, usize)> = BTreeMap::new();
    for e in epochs {
        for (sat, c) in &e.cno {
            let slot = acc.entry(*sat).or_default();
            slot.0 += c;
            slot.1 += 1;
        }
    }
    let mut per_sat_ref = BTreeMap::new();
    let mut excluded = Vec::new();
    for (sat, (sum, n)) in acc {
        if n >= MIN_CALIBRATION_SAMPLES {
            per_sat_ref.insert(sat, sum / n as f64);
        } else {
            excluded.push((sat, n));
        }
    }
    if per_sat_ref.is_empty() {
        return Err(DetectError::NoSatellites);
    }
    let min_sats = min_sats.unwrap_or_else(|| default_min_sats(per_sat_ref.len()));
    Ok(CnoCalibration { per_sat_ref, drop_threshold, min_sats, excluded })
}

/// C/N0 detector outcome with its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnoDecision {
    pub flag: bool,
    /// Present satellites below reference by more than the threshold, plus
    /// calibrated satellites missing from the epoch.
    pub dropping: usize,
    /// Calibrated satellites reporting C/N0.
    pub present: usize,
    /// Calibrated satellites absent from the epoch.
    pub missing: usize,
    /// Quorum applied: `min(min_sats, calibrated satellites)`.
    pub required: usize,
}

/// Flags when enough calibrated satellites drop together. A calibrated
/// satellite absent from the epoch counts as dropping.
pub fn cno_detect(epoch: &ObservableEpoch, cal: &CnoCalibration) -> Result<CnoDecision> {
    let mut present = 0;
    let mut below = 0;
    let mut missing = 0;
    let mut marked_lost = false;
    for (sat, reference) in &cal.per_sat_ref {
        match epoch.cno.get(sat) {
            Some(c) => {
                present += 1;
                if *c < reference - cal.drop_threshold {
                    below += 1;
                }
            }
            None => {
                missing += 1;
                marked_lost |= epoch.lost.contains(sat);
            }
        }
    }
    if present == 0 && !marked_lost {
        return Err(DetectError::MissingObservable { t: epoch.t, what: "C/N0" });
    }
    let dropping = below + missing;
    let required = cal.min_sats.min(cal.per_sat_ref.len());
    Ok(CnoDecision { flag: dropping >= required, dropping, present, missing, required })
}

/// Both detectors' verdict for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorVerdict {
    pub t: f64,
    pub agc_flag: Option<bool>,
    pub cno_flag: Option<bool>,
    pub agc: Option<AgcDecision>,
    pub cno: Option<CnoDecision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorOptions {
    /// Consecutive raw detections needed before a flag is raised; 1 disables
    /// debouncing.
    pub debounce_epochs: usize,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        Self { debounce_epochs: 1 }
    }
}

/// Runs whichever detectors are calibrated over every epoch. A missing
/// observable yields an absent flag for that epoch only.
pub fn run_detectors(
    epochs: &[ObservableEpoch],
    agc_cal: Option<&AgcCalibration>,
    cno_cal: Option<&CnoCalibration>,
    opts: DetectorOptions,
    exec: Execution,
) -> Vec<DetectorVerdict> {
    let mut verdicts = par::map_slice(epochs, exec, |e| {
        let agc = agc_cal.and_then(|c| agc_detect(e, c).ok());
        let cno = cno_cal.and_then(|c| cno_detect(e, c).ok());
        DetectorVerdict { t: e.t, agc_flag: agc.map(|d| d.flag), cno_flag: cno.map(|d| d.flag), agc, cno }
    });
    if opts.debounce_epochs > 1 {
        debounce(&mut verdicts, opts.debounce_epochs, |v| &mut v.agc_flag);
        debounce(&mut verdicts, opts.debounce_epochs, |v| &mut v.cno_flag);
    }
    verdicts
}

fn debounce(
    verdicts: &mut [DetectorVerdict],
    n: usize,
    field: impl Fn(&mut DetectorVerdict) -> &mut Option<bool>,
) {
    let mut run = 0;
    for v in verdicts.iter_mut() {
        let slot = field(v);
        run = if *slot == Some(true) { run + 1 } else { 0 };
        if let Some(flag) = slot.as_mut() {
            *flag = *flag && run >= n;
        }
    }
}
