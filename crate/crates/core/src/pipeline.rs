//! The workflows behind the command-line tool: simulate, calibrate, detect,
//! evaluate and export plot series. Every step reads and writes plain files
//! that the next step accepts unchanged.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{
    calibrate_agc, calibrate_cno, run_detectors, AgcCalibration, CnoCalibration, DetectError,
    DetectorOptions, DetectorVerdict,
};
use crate::io::config::Scenario;
use crate::io::frame::{decode_epochs, encode_epochs, FrameError};
use crate::io::log::{
    parse_jsonl, parse_observable_log, write_jsonl, write_observable_log, LogError, ObservableEpoch, SatId,
};
use crate::metrics::{compare, evaluate, ComparisonTable, GroundTruth, MetricsError, MetricsReport};
use crate::par::Execution;
use crate::scenario::{self, ScenarioError};

pub const OBSERVABLES_JSONL: &str = "observables.obs.jsonl";
pub const OBSERVABLES_BLK: &str = "observables.blk";
pub const TRUTH_FILE: &str = "truth.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IQ_DUMP_FILE: &str = "adc.iq32";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const COMPARISON_FILE: &str = "comparison.txt";
pub const AGC_SERIES_FILE: &str = "agc.tsv";
pub const CNO_SERIES_FILE: &str = "cno.tsv";
pub const FLAGS_SERIES_FILE: &str = "flags.tsv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Log {
        path: PathBuf,
        #[source]
        source: LogError,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("calibration window [{start}, {end}) s contains no epochs")]
    EmptyWindow { start: f64, end: f64 },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

/// Which engine produces the observables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Fast,
    Iq,
}

/// Provenance of a simulation run. Hash and seed determine the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: SimMode,
    pub config_path: Option<String>,
    pub outputs: Vec<String>,
    pub created_unix_s: u64,
}

impl RunManifest {
    /// Whether two runs are guaranteed to produce identical outputs.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        self.config_hash == other.config_hash
            && self.seed == other.seed
            && self.mode == other.mode
            && self.tool_version == other.tool_version
    }
}

/// Simulates a scenario and writes the observable log (text and binary),
/// the ground truth and the manifest into `out_dir`.
pub fn simulate(
    s: &Scenario,
    mode: SimMode,
    dump_iq: bool,
    config_path: Option<&Path>,
    out_dir: &Path,
    exec: Execution,
) -> Result<RunManifest> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let dump = dump_iq.then(|| out_dir.join(IQ_DUMP_FILE));
    let epochs = match mode {
        SimMode::Fast => scenario::simulate_fast(s, exec)?,
        SimMode::Iq => scenario::simulate_iq(s, exec, dump.as_deref())?,
    };

    let mut outputs = vec![OBSERVABLES_JSONL, OBSERVABLES_BLK, TRUTH_FILE];
    let log_path = out_dir.join(OBSERVABLES_JSONL);
    let mut text = Vec::new();
    write_observable_log(&epochs, &mut text)
        .map_err(|source| PipelineError::Log { path: log_path.clone(), source })?;
    write_file(&log_path, &text)?;
    write_file(&out_dir.join(OBSERVABLES_BLK), &encode_epochs(&epochs)?)?;
    write_truth(&scenario::ground_truth(s), &out_dir.join(TRUTH_FILE))?;
    if dump.is_some() {
        outputs.push(IQ_DUMP_FILE);
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: s.hash(),
        seed: s.seed,
        mode,
        config_path: config_path.map(|p| p.display().to_string()),
        outputs: outputs.into_iter().map(String::from).collect(),
        created_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_file(&out_dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

/// Observable log from either format, chosen by extension: `.blk` is the
/// framed binary stream, anything else the text log. Returns warnings for
/// skipped frames.
pub fn read_observables(path: &Path) -> Result<(Vec<ObservableEpoch>, Vec<String>)> {
    if path.extension().is_some_and(|e| e == "blk") {
        let bytes = read_file(path)?;
        let (epochs, report) = decode_epochs(&bytes);
        let mut warnings = Vec::new();
        if !report.errors.is_empty() {
            warnings.push(format!("{}: skipped {} damaged frame(s)", path.display(), report.errors.len()));
        }
        if report.unknown_blocks > 0 {
            warnings.push(format!(
                "{}: skipped {} frame(s) with unknown block ids",
                path.display(),
                report.unknown_blocks
            ));
        }
        Ok((epochs, warnings))
    } else {
        let f = fs::File::open(path).map_err(io_err(path))?;
        let epochs = parse_observable_log(BufReader::new(f))
            .map_err(|source| PipelineError::Log { path: path.to_path_buf(), source })?;
        Ok((epochs, Vec::new()))
    }
}

pub fn write_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let text = toml::to_string(truth).expect("ground truth serializes");
    write_file(path, text.as_bytes())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text)
        .map_err(|e| PipelineError::Format { path: path.to_path_buf(), reason: e.message().to_string() })
}

/// Detector parameters used by [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationParams {
    pub t_drop_db: f64,
    pub cno_drop_db: f64,
    pub min_sats: Option<usize>,
    /// AGC spread above which the window is reported as possibly jammed.
    pub contamination_sigma_db: f64,
}

impl CalibrationParams {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            t_drop_db: s.detect.t_drop_db,
            cno_drop_db: s.detect.cno_drop_db,
            min_sats: s.detect.min_sats,
            contamination_sigma_db: s.detect.contamination_sigma_db,
        }
    }
}

/// Calibration of both detectors over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub window: [f64; 2],
    pub agc: Option<AgcCalibration>,
    pub cno: Option<CnoCalibration>,
    pub warnings: Vec<String>,
}

/// Calibrates the detectors on the epochs inside `[window[0], window[1])`.
/// A detector whose observable never appears in the window is left
/// uncalibrated with a warning; too few samples is an error.
pub fn calibrate(epochs: &[ObservableEpoch], window: [f64; 2], p: &CalibrationParams) -> Result<Calibration> {
    let [start, end] = window;
    let inside: Vec<ObservableEpoch> = epochs.iter().filter(|e| e.t >= start && e.t < end).cloned().collect();
    if inside.is_empty() {
        return Err(PipelineError::EmptyWindow { start, end });
    }
    let mut warnings = Vec::new();

    let agc_samples: Vec<f64> = inside.iter().filter_map(|e| e.agc_db).collect();
    let agc = if agc_samples.is_empty() {
        warnings.push("no AGC values in the window; AGC detector not calibrated".to_string());
        None
    } else {
        let cal = calibrate_agc(&agc_samples, p.t_drop_db)?;
        if cal.sigma_ref > p.contamination_sigma_db {
            warnings.push(format!(
                "AGC spread {:.2} dB exceeds {:.2} dB; the window may contain interference",
                cal.sigma_ref, p.contamination_sigma_db
            ));
        }
        Some(cal)
    };

    let cno = if inside.iter().all(|e| e.cno.is_empty()) {
        warnings.push("no C/N0 values in the window; C/N0 detector not calibrated".to_string());
        None
    } else {
        let cal = calibrate_cno(&inside, p.cno_drop_db, p.min_sats)?;
        for (sat, n) in &cal.excluded {
            warnings.push(format!("{sat} excluded from calibration: {n} samples in the window"));
        }
        Some(cal)
    };
    Ok(Calibration { window, agc, cno, warnings })
}

pub fn write_calibration(cal: &Calibration, path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(cal).expect("calibration serializes");
    write_file(path, &json)
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Format { path: path.to_path_buf(), reason: e.to_string() })
}

/// Runs both detectors. Warns when calibrated satellites never appear in
/// the log.
pub fn detect(
    epochs: &[ObservableEpoch],
    cal: &Calibration,
    opts: DetectorOptions,
    exec: Execution,
) -> (Vec<DetectorVerdict>, Vec<String>) {
    let mut warnings = Vec::new();
    if let Some(c) = &cal.cno {
        let seen: BTreeSet<SatId> =
            epochs.iter().flat_map(|e| e.cno.keys().chain(e.lost.iter()).copied()).collect();
        let absent: Vec<String> =
            c.per_sat_ref.keys().filter(|s| !seen.contains(s)).map(ToString::to_string).collect();
        if !absent.is_empty() {
            warnings.push(format!("calibrated satellites absent from the log: {}", absent.join(", ")));
        }
    }
    let verdicts = run_detectors(epochs, cal.agc.as_ref(), cal.cno.as_ref(), opts, exec);
    (verdicts, warnings)
}

pub fn write_verdicts(verdicts: &[DetectorVerdict], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(verdicts, &mut buf)
        .map_err(|source| PipelineError::Log { path: path.to_path_buf(), source })?;
    write_file(path, &buf)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<DetectorVerdict>> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    parse_jsonl(BufReader::new(f)).map_err(|source| PipelineError::Log { path: path.to_path_buf(), source })
}

/// Scores of both detectors against one truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evaluation {
    pub agc: MetricsReport,
    pub cno: MetricsReport,
}

/// Scores the verdict stream. An absent flag counts as no detection.
pub fn evaluate_verdicts(
    verdicts: &[DetectorVerdict],
    truth: &GroundTruth,
    guard_band_s: f64,
) -> Result<Evaluation> {
    let agc: Vec<(f64, bool)> = verdicts.iter().map(|v| (v.t, v.agc_flag.unwrap_or(false))).collect();
    let cno: Vec<(f64, bool)> = verdicts.iter().map(|v| (v.t, v.cno_flag.unwrap_or(false))).collect();
    Ok(Evaluation { agc: evaluate(&agc, truth, guard_band_s)?, cno: evaluate(&cno, truth, guard_band_s)? })
}

impl Evaluation {
    pub fn comparison(&self) -> ComparisonTable {
        compare("AGC-based", &self.agc, "CNO-based", &self.cno).expect("both reports share one truth")
    }

    /// Flat `key = value` text, keys prefixed by detector.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (name, r) in [("agc", &self.agc), ("cno", &self.cno)] {
            for line in r.to_key_values().lines() {
                let _ = writeln!(out, "{name}.{line}");
            }
        }
        out
    }

    /// Writes the text report, the JSON record and the comparison table.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        write_file(&out_dir.join(REPORT_TEXT_FILE), self.to_key_values().as_bytes())?;
        let mut json = serde_json::to_vec_pretty(self).expect("report serializes");
        json.push(b'\n');
        write_file(&out_dir.join(REPORT_JSON_FILE), &json)?;
        write_file(&out_dir.join(COMPARISON_FILE), self.comparison().render().as_bytes())
    }
}

/// Columnar series for plotting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotSeries {
    pub agc: Vec<(f64, f64)>,
    pub cno: Vec<(f64, SatId, f64)>,
    pub flags: Vec<(f64, Option<bool>, Option<bool>)>,
}

const AGC_HEADER: &str = "t\tagc_db";
const CNO_HEADER: &str = "t\tsat\tcno_dbhz";
const FLAGS_HEADER: &str = "t\tagc_flag\tcno_flag";

impl PlotSeries {
    pub fn from_sources(epochs: &[ObservableEpoch], verdicts: &[DetectorVerdict]) -> Self {
        Self {
            agc: epochs.iter().filter_map(|e| e.agc_db.map(|a| (e.t, a))).collect(),
            cno: epochs.iter().flat_map(|e| e.cno.iter().map(move |(s, c)| (e.t, *s, *c))).collect(),
            flags: verdicts.iter().map(|v| (v.t, v.agc_flag, v.cno_flag)).collect(),
        }
    }

    /// Writes `agc.tsv`, `cno.tsv` and `flags.tsv`, each with a header line.
    /// Absent flags are written as `-`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let flag = |f: Option<bool>| match f {
            Some(true) => "1",
            Some(false) => "0",
            None => "-",
        };
        let mut agc = format!("{AGC_HEADER}\n");
        for (t, a) in &self.agc {
            let _ = writeln!(agc, "{t}\t{a}");
        }
        let mut cno = format!("{CNO_HEADER}\n");
        for (t, s, c) in &self.cno {
            let _ = writeln!(cno, "{t}\t{s}\t{c}");
        }
        let mut flags = format!("{FLAGS_HEADER}\n");
        for (t, a, c) in &self.flags {
            let _ = writeln!(flags, "{t}\t{}\t{}", flag(*a), flag(*c));
        }
        write_file(&out_dir.join(AGC_SERIES_FILE), agc.as_bytes())?;
        write_file(&out_dir.join(CNO_SERIES_FILE), cno.as_bytes())?;
        write_file(&out_dir.join(FLAGS_SERIES_FILE), flags.as_bytes())
    }

    /// Reads series written by [`PlotSeries::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        fn rows(dir: &Path, name: &str, header: &str, cols: usize) -> Result<Vec<Vec<String>>> {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let bad = |line: usize, reason: &str| PipelineError::Format {
                path: path.clone(),
                reason: format!("line {line}: {reason}"),
            };
            let mut lines = text.lines();
            if lines.next() != Some(header) {
                return Err(bad(1, "unexpected header"));
            }
            lines
                .enumerate()
                .map(|(i, l)| {
                    let f: Vec<String> = l.split('\t').map(String::from).collect();
                    if f.len() == cols {
                        Ok(f)
                    } else {
                        Err(bad(i + 2, &format!("expected {cols} columns")))
                    }
                })
                .collect()
        }
        let num = |dir: &Path, name: &str, s: &str| -> Result<f64> {
            s.parse().map_err(|_| PipelineError::Format {
                path: dir.join(name),
                reason: format!("not a number: {s:?}"),
            })
        };
        let flag = |s: &str| -> Result<Option<bool>> {
            match s {
                "1" => Ok(Some(true)),
                "0" => Ok(Some(false)),
                "-" => Ok(None),
                _ => Err(PipelineError::Format {
                    path: dir.join(FLAGS_SERIES_FILE),
                    reason: format!("not a flag: {s:?}"),
                }),
            }
        };
        let mut out = PlotSeries::default();
        for r in rows(dir, AGC_SERIES_FILE, AGC_HEADER, 2)? {
            out.agc.push((num(dir, AGC_SERIES_FILE, &r[0])?, num(dir, AGC_SERIES_FILE, &r[1])?));
        }
        for r in rows(dir, CNO_SERIES_FILE, CNO_HEADER, 3)? {
            let sat: SatId = r[1]
                .parse()
                .map_err(|reason| PipelineError::Format { path: dir.join(CNO_SERIES_FILE), reason })?;
            out.cno.push((num(dir, CNO_SERIES_FILE, &r[0])?, sat, num(dir, CNO_SERIES_FILE, &r[2])?));
        }
        for r in rows(dir, FLAGS_SERIES_FILE, FLAGS_HEADER, 3)? {
            out.flags.push((num(dir, FLAGS_SERIES_FILE, &r[0])?, flag(&r[1])?, flag(&r[2])?));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::config::parse_scenario;

    fn scenario() -> Scenario {
        parse_scenario(
            "[schedule]\nn_intervals = 2\ninterval_len_s = 10.0\ngap_len_s = 40.0\njnr_start_db = 10.0\n",
            "t",
        )
        .unwrap()
    }

    #[test]
    fn end_to_end_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario();
        let m = simulate(&s, SimMode::Fast, false, None, dir.path(), Execution::default()).unwrap();
        assert_eq!(m.config_hash, s.hash());

        let (text, w1) = read_observables(&dir.path().join(OBSERVABLES_JSONL)).unwrap();
        let (bin, w2) = read_observables(&dir.path().join(OBSERVABLES_BLK)).unwrap();
        assert!(w1.is_empty() && w2.is_empty());
        assert_eq!(text, bin);

        let truth = read_truth(&dir.path().join(TRUTH_FILE)).unwrap();
        assert_eq!(truth, scenario::ground_truth(&s));

        let cal = calibrate(&text, s.calibration_window(), &CalibrationParams::from_scenario(&s)).unwrap();
        assert!(cal.warnings.is_empty(), "{:?}", cal.warnings);
        let cal_path = dir.path().join(CALIBRATION_FILE);
        write_calibration(&cal, &cal_path).unwrap();
        assert_eq!(read_calibration(&cal_path).unwrap(), cal);

        let (verdicts, warnings) = detect(&text, &cal, DetectorOptions::default(), Execution::default());
        assert!(warnings.is_empty());
        let vpath = dir.path().join(VERDICTS_FILE);
        write_verdicts(&verdicts, &vpath).unwrap();
        assert_eq!(read_verdicts(&vpath).unwrap(), verdicts);

        let ev = evaluate_verdicts(&verdicts, &truth, 0.0).unwrap();
        assert_eq!(ev.agc.intervals_detected, 2);
        ev.write(dir.path()).unwrap();
        let kv = fs::read_to_string(dir.path().join(REPORT_TEXT_FILE)).unwrap();
        assert!(kv.contains("agc.intervals_detected = 2"));
    }

    #[test]
    fn calibration_window_rules() {
        let s = scenario();
        let e = scenario::simulate_fast(&s, Execution::default()).unwrap();
        let p = CalibrationParams::from_scenario(&s);
        assert!(matches!(calibrate(&e, [500.0, 600.0], &p), Err(PipelineError::EmptyWindow { .. })));
        assert!(matches!(
            calibrate(&e, [0.0, 10.0], &p),
            Err(PipelineError::Detect(DetectError::InsufficientCalibration { .. }))
        ));
        // a window straddling a strong interval is accepted but flagged
        let dirty = calibrate(&e, [20.0, 60.0], &p).unwrap();
        assert!(dirty.warnings.iter().any(|w| w.contains("interference")), "{:?}", dirty.warnings);
    }

    #[test]
    fn plot_series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = scenario();
        let e = scenario::simulate_fast(&s, Execution::default()).unwrap();
        let cal = calibrate(&e, s.calibration_window(), &CalibrationParams::from_scenario(&s)).unwrap();
        let (v, _) = detect(&e, &cal, DetectorOptions::default(), Execution::default());
        let series = PlotSeries::from_sources(&e, &v);
        series.write(dir.path()).unwrap();
        let back = PlotSeries::read(dir.path()).unwrap();
        assert_eq!(back, series);

        let empty = tempfile::tempdir().unwrap();
        PlotSeries::default().write(empty.path()).unwrap();
        assert_eq!(PlotSeries::read(empty.path()).unwrap(), PlotSeries::default());
    }
}
