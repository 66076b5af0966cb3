//! Scenario files (TOML).
//!
//! Every key is optional and every default is reached only by omitting the
//! key. Unknown keys are errors. An empty file is the full-length scenario:
//! seven 30 s intervals stepped by 5 dB over about half an hour.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{DEFAULT_CNO_DROP_DB, DEFAULT_T_DROP_DB};
use crate::frontend::AgcConfig;
use crate::io::log::SatId;
use crate::tracking::{ChannelModel, CnoEstimatorConfig, GPS_CA_CHIP_RATE};
use crate::waveform::{build_schedule, ChirpConfig, ChirpParams, JamInterval, JammingSchedule};

/// A scenario file failed to load. `key` is the dotted key path, empty when
/// the failure is not tied to one key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub key: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}: {}", self.path, self.reason)
        } else {
            write!(f, "{}: {}: {}", self.path, self.key, self.reason)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub n_intervals: Option<usize>,
    pub interval_len_s: Option<f64>,
    pub gap_len_s: Option<f64>,
    pub jnr_start_db: Option<f64>,
    pub jnr_step_db: Option<f64>,
    /// Explicit intervals. Excludes the generator keys above.
    pub intervals: Option<Vec<JamInterval>>,
}

pub const DEFAULT_N_INTERVALS: usize = 7;
pub const DEFAULT_INTERVAL_LEN_S: f64 = 30.0;
pub const DEFAULT_GAP_LEN_S: f64 = 200.0;
pub const DEFAULT_JNR_START_DB: f64 = 1.0;
pub const DEFAULT_JNR_STEP_DB: f64 = 5.0;

/// Front end: noise floor, AGC loop, ADC and the fast-path readout jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendParams {
    /// Reference noise power at the antenna, dB. JNR is relative to it.
    pub noise_power_db: f64,
    /// Front-end bandwidth, Hz. Also the IQ sample rate.
    pub bandwidth_hz: f64,
    pub target_power_db: f64,
    pub loop_gain: f64,
    /// Seconds of samples per AGC update.
    pub block_s: f64,
    pub gain_min_db: f64,
    pub gain_max_db: f64,
    /// Standard deviation of the reported AGC value around the loop gain.
    pub readout_jitter_db: f64,
    pub adc_bits: u32,
    /// Full scale above the AGC setpoint.
    pub adc_backoff_db: f64,
}

impl Default for FrontendParams {
    fn default() -> Self {
        Self {
            noise_power_db: 0.0,
            bandwidth_hz: 2e6,
            target_power_db: 30.0,
            loop_gain: 0.5,
            block_s: 0.01,
            gain_min_db: -30.0,
            gain_max_db: 60.0,
            readout_jitter_db: 0.2,
            adc_bits: 8,
            adc_backoff_db: 12.0,
        }
    }
}

impl FrontendParams {
    pub fn block_len(&self) -> usize {
        (self.block_s * self.bandwidth_hz).round() as usize
    }

    pub fn agc_config(&self) -> AgcConfig {
        AgcConfig::new(
            self.target_power_db,
            self.loop_gain,
            self.block_len(),
            self.gain_min_db,
            self.gain_max_db,
        )
        .expect("validated at load")
    }

    pub fn noise_power(&self) -> f64 {
        10f64.powf(self.noise_power_db / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingParams {
    pub code_period_s: f64,
    pub coherent_blocks: usize,
    pub averaging_k: usize,
    pub aj_quality_q: f64,
    pub chip_rate: f64,
    pub tracking_threshold_dbhz: f64,
    pub reacquisition_delay_s: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        let e = CnoEstimatorConfig::default();
        Self {
            code_period_s: e.code_period_s,
            coherent_blocks: e.coherent_blocks,
            averaging_k: e.averaging_k,
            aj_quality_q: 1.5,
            chip_rate: GPS_CA_CHIP_RATE,
            tracking_threshold_dbhz: 25.0,
            reacquisition_delay_s: 5.0,
        }
    }
}

impl TrackingParams {
    pub fn estimator(&self) -> CnoEstimatorConfig {
        CnoEstimatorConfig {
            code_period_s: self.code_period_s,
            coherent_blocks: self.coherent_blocks,
            averaging_k: self.averaging_k,
        }
    }

    pub fn channel(&self, nominal_cn0_dbhz: f64) -> ChannelModel {
        ChannelModel { nominal_cn0_dbhz, aj_quality_q: self.aj_quality_q, chip_rate: self.chip_rate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Satellite {
    pub prn: u8,
    pub nominal_cn0_dbhz: f64,
}

impl Satellite {
    pub fn id(&self) -> SatId {
        SatId(self.prn)
    }
}

pub fn default_constellation() -> Vec<Satellite> {
    [(2, 45.0), (5, 41.0), (7, 47.0), (9, 39.0), (13, 44.0), (15, 36.0), (20, 48.0), (30, 42.0)]
        .into_iter()
        .map(|(prn, nominal_cn0_dbhz)| Satellite { prn, nominal_cn0_dbhz })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectParams {
    pub t_drop_db: f64,
    pub cno_drop_db: f64,
    /// Quorum of dropping satellites. Defaults to min(4, ⌈n/2⌉).
    pub min_sats: Option<usize>,
    pub debounce_epochs: usize,
    /// `[start, end)` of the interference-free calibration window, s.
    /// Defaults to everything before the first interval.
    pub calibration_window: Option<[f64; 2]>,
    /// AGC spread above which a calibration window is reported as possibly
    /// contaminated.
    pub contamination_sigma_db: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            t_drop_db: DEFAULT_T_DROP_DB,
            cno_drop_db: DEFAULT_CNO_DROP_DB,
            min_sats: None,
            debounce_epochs: 1,
            calibration_window: None,
            contamination_sigma_db: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsParams {
    pub guard_band_s: f64,
}

fn default_seed() -> u64 {
    1
}

fn default_epoch_period() -> f64 {
    1.0
}

fn default_satellites() -> Vec<Satellite> {
    default_constellation()
}

/// A scenario file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_epoch_period")]
    epoch_period_s: f64,
    #[serde(default)]
    duration_s: Option<f64>,
    #[serde(default)]
    schedule: ScheduleSection,
    #[serde(default)]
    chirp: ChirpParams,
    #[serde(default)]
    frontend: FrontendParams,
    #[serde(default)]
    tracking: TrackingParams,
    #[serde(default = "default_satellites")]
    satellites: Vec<Satellite>,
    #[serde(default)]
    detect: DetectParams,
    #[serde(default)]
    metrics: MetricsParams,
}

/// A validated scenario with every default resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub seed: u64,
    pub epoch_period_s: f64,
    pub duration_s: f64,
    pub schedule: JammingSchedule,
    pub chirp: ChirpParams,
    pub frontend: FrontendParams,
    pub tracking: TrackingParams,
    pub satellites: Vec<Satellite>,
    pub detect: DetectParams,
    pub metrics: MetricsParams,
}

impl Scenario {
    /// All defaults.
    pub fn defaults() -> Self {
        parse_scenario("", "<defaults>").expect("defaults are valid")
    }

    pub fn chirp_config(&self) -> ChirpConfig {
        ChirpConfig::new(self.chirp.clone()).expect("validated at load")
    }

    pub fn epoch_count(&self) -> usize {
        (self.duration_s / self.epoch_period_s + 1e-9).floor() as usize
    }

    pub fn epoch_time(&self, w: usize) -> f64 {
        w as f64 * self.epoch_period_s
    }

    /// `[start, end)` of the calibration window.
    pub fn calibration_window(&self) -> [f64; 2] {
        self.detect.calibration_window.unwrap_or_else(|| {
            let first = self.schedule.intervals().first().map_or(self.duration_s, |iv| iv.start_s);
            [0.0, first]
        })
    }

    /// Hex SHA-256 of the resolved scenario.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Re-runs validation, e.g. after overriding a field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let file = ScenarioFile {
            seed: self.seed,
            epoch_period_s: self.epoch_period_s,
            duration_s: Some(self.duration_s),
            schedule: ScheduleSection {
                intervals: Some(self.schedule.intervals().to_vec()),
                ..ScheduleSection::default()
            },
            chirp: self.chirp.clone(),
            frontend: self.frontend.clone(),
            tracking: self.tracking.clone(),
            satellites: self.satellites.clone(),
            detect: self.detect.clone(),
            metrics: self.metrics.clone(),
        };
        resolve(file, "<scenario>").map(|_| ())
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: label.clone(),
        key: String::new(),
        reason: e.to_string(),
    })?;
    parse_scenario(&text, &label)
}

/// Parses scenario text; `label` names the source in errors.
pub fn parse_scenario(text: &str, label: &str) -> Result<Scenario, ConfigError> {
    let err = |key: String, reason: String| ConfigError { path: label.to_string(), key, reason };
    let de = toml::Deserializer::parse(text).map_err(|e| err(String::new(), e.message().to_string()))?;
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let key = if key == "." { String::new() } else { key };
        err(key, e.into_inner().message().to_string())
    })?;
    resolve(file, label)
}

fn resolve(f: ScenarioFile, label: &str) -> Result<Scenario, ConfigError> {
    let fail =
        |key: &str, reason: String| ConfigError { path: label.to_string(), key: key.to_string(), reason };
    let positive = |key: &str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(fail(key, format!("must be positive, got {v}")))
        }
    };
    let nonneg = |key: &str, v: f64| {
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(fail(key, format!("must be nonnegative, got {v}")))
        }
    };
    let finite = |key: &str, v: f64| {
        if v.is_finite() {
            Ok(())
        } else {
            Err(fail(key, format!("must be finite, got {v}")))
        }
    };

    positive("epoch_period_s", f.epoch_period_s)?;

    let s = &f.schedule;
    let schedule = match &s.intervals {
        Some(list) => {
            if s.n_intervals.is_some()
                || s.interval_len_s.is_some()
                || s.gap_len_s.is_some()
                || s.jnr_start_db.is_some()
                || s.jnr_step_db.is_some()
            {
                return Err(fail(
                    "schedule.intervals",
                    "explicit intervals exclude n_intervals, interval_len_s, gap_len_s, jnr_start_db and jnr_step_db".into(),
                ));
            }
            JammingSchedule::new(list.clone()).map_err(|e| fail("schedule.intervals", e.to_string()))?
        }
        None => build_schedule(
            s.n_intervals.unwrap_or(DEFAULT_N_INTERVALS),
            s.interval_len_s.unwrap_or(DEFAULT_INTERVAL_LEN_S),
            s.gap_len_s.unwrap_or(DEFAULT_GAP_LEN_S),
            s.jnr_start_db.unwrap_or(DEFAULT_JNR_START_DB),
            s.jnr_step_db.unwrap_or(DEFAULT_JNR_STEP_DB),
        )
        .map_err(|e| fail("schedule", e.to_string()))?,
    };

    let duration_s = match f.duration_s {
        Some(d) => {
            positive("duration_s", d)?;
            if d < schedule.end() {
                return Err(fail(
                    "duration_s",
                    format!("{d} s ends before the last interval ({} s)", schedule.end()),
                ));
            }
            d
        }
        None => schedule.end() + s.gap_len_s.unwrap_or(DEFAULT_GAP_LEN_S),
    };

    ChirpConfig::new(f.chirp.clone()).map_err(|e| fail("chirp", e.to_string()))?;

    let fe = &f.frontend;
    finite("frontend.noise_power_db", fe.noise_power_db)?;
    positive("frontend.bandwidth_hz", fe.bandwidth_hz)?;
    positive("frontend.block_s", fe.block_s)?;
    if fe.block_len() == 0 {
        return Err(fail("frontend.block_s", "shorter than one sample".into()));
    }
    if fe.block_s > f.epoch_period_s {
        return Err(fail("frontend.block_s", "longer than one epoch".into()));
    }
    AgcConfig::new(fe.target_power_db, fe.loop_gain, fe.block_len(), fe.gain_min_db, fe.gain_max_db)
        .map_err(|e| fail("frontend", e.to_string()))?;
    nonneg("frontend.readout_jitter_db", fe.readout_jitter_db)?;
    if !(2..=16).contains(&fe.adc_bits) {
        return Err(fail("frontend.adc_bits", format!("must be 2..=16, got {}", fe.adc_bits)));
    }
    finite("frontend.adc_backoff_db", fe.adc_backoff_db)?;

    let tr = &f.tracking;
    let est = tr.estimator();
    est.validate().map_err(|e| fail("tracking", e.to_string()))?;
    if est.span_s() > f.epoch_period_s + 1e-12 {
        return Err(fail(
            "tracking.averaging_k",
            format!("K·M·T = {} s exceeds the epoch period {} s", est.span_s(), f.epoch_period_s),
        ));
    }
    finite("tracking.tracking_threshold_dbhz", tr.tracking_threshold_dbhz)?;
    nonneg("tracking.reacquisition_delay_s", tr.reacquisition_delay_s)?;

    if f.satellites.is_empty() {
        return Err(fail("satellites", "at least one satellite is required".into()));
    }
    for (k, sat) in f.satellites.iter().enumerate() {
        if sat.prn == 0 {
            return Err(fail(&format!("satellites[{k}].prn"), "PRN 0 is not a satellite".into()));
        }
        if f.satellites[..k].iter().any(|o| o.prn == sat.prn) {
            return Err(fail(&format!("satellites[{k}].prn"), format!("duplicate PRN {}", sat.prn)));
        }
        tr.channel(sat.nominal_cn0_dbhz)
            .validate()
            .map_err(|e| fail(&format!("satellites[{k}]"), e.to_string()))?;
    }

    let d = &f.detect;
    nonneg("detect.t_drop_db", d.t_drop_db)?;
    positive("detect.cno_drop_db", d.cno_drop_db)?;
    if d.min_sats == Some(0) {
        return Err(fail("detect.min_sats", "must be at least 1".into()));
    }
    if d.debounce_epochs == 0 {
        return Err(fail("detect.debounce_epochs", "must be at least 1".into()));
    }
    if let Some([a, b]) = d.calibration_window {
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b > a) {
            return Err(fail("detect.calibration_window", format!("[{a}, {b}) is not a valid window")));
        }
    }
    positive("detect.contamination_sigma_db", d.contamination_sigma_db)?;
    nonneg("metrics.guard_band_s", f.metrics.guard_band_s)?;

    Ok(Scenario {
        seed: f.seed,
        epoch_period_s: f.epoch_period_s,
        duration_s,
        schedule,
        chirp: f.chirp,
        frontend: f.frontend,
        tracking: f.tracking,
        satellites: f.satellites,
        detect: f.detect,
        metrics: f.metrics,
    })
}
