//! Linear chirp interference, thermal noise and stepped-power jamming
//! schedules at complex baseband.
//!
//! Frequencies are offsets from the L1 centre; the carrier itself is never
//! synthesised.

use std::f64::consts::{PI, TAU};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::rng::{self, Domain};

/// Samples per independently seeded noise chunk.
const NOISE_CHUNK: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("invalid chirp configuration: {0}")]
    InvalidChirp(String),
    #[error("sample rate {sample_rate} Hz is below the Nyquist guard of {required} Hz")]
    NyquistViolation { sample_rate: f64, required: f64 },
    #[error("noise power must be positive and finite, got {0}")]
    InvalidNoisePower(f64),
    #[error("invalid jamming schedule: {0}")]
    InvalidSchedule(String),
    #[error("buffer mismatch: {0}")]
    BufferMismatch(String),
    #[error("invalid buffer: {0}")]
    InvalidBuffer(String),
    #[error("iq32 i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, WaveformError>;

/// Direction of the frequency ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SweepDirection {
    #[default]
    Up,
    Down,
}

impl SweepDirection {
    pub fn sign(self) -> f64 {
        match self {
            SweepDirection::Up => 1.0,
            SweepDirection::Down => -1.0,
        }
    }
}

/// Raw chirp parameters, as they appear in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChirpParams {
    /// Linear power relative to the unit noise floor.
    pub power: f64,
    /// Frequency at the start of each sweep, Hz.
    pub start_freq_hz: f64,
    /// Initial phase, radians.
    pub phase_rad: f64,
    pub direction: SweepDirection,
    pub sweep_period_s: f64,
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
    /// Carry accumulated phase across sweep restarts.
    pub phase_continuous: bool,
}

impl Default for ChirpParams {
    fn default() -> Self {
        Self {
            power: 1.0,
            start_freq_hz: -250e3,
            phase_rad: 0.0,
            direction: SweepDirection::Up,
            sweep_period_s: 1e-3,
            freq_min_hz: -250e3,
            freq_max_hz: 250e3,
            phase_continuous: true,
        }
    }
}

/// Validated chirp description.
#[derive(Debug, Clone, PartialEq)]
pub struct ChirpConfig {
    p: ChirpParams,
}

impl ChirpConfig {
    pub fn new(p: ChirpParams) -> Result<Self> {
        let finite = [p.power, p.start_freq_hz, p.phase_rad, p.sweep_period_s, p.freq_min_hz, p.freq_max_hz]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(WaveformError::InvalidChirp("non-finite parameter".into()));
        }
        if p.power <= 0.0 {
            return Err(WaveformError::InvalidChirp(format!("power must be positive, got {}", p.power)));
        }
        if p.sweep_period_s <= 0.0 {
            return Err(WaveformError::InvalidChirp(format!(
                "sweep period must be positive, got {}",
                p.sweep_period_s
            )));
        }
        if p.freq_max_hz <= p.freq_min_hz {
            return Err(WaveformError::InvalidChirp(format!(
                "sweep bandwidth must be positive (freq_min {} Hz, freq_max {} Hz)",
                p.freq_min_hz, p.freq_max_hz
            )));
        }
        Ok(Self { p })
    }

    pub fn params(&self) -> &ChirpParams {
        &self.p
    }

    /// Same chirp at a different power.
    pub fn with_power(&self, power: f64) -> Result<Self> {
        Self::new(ChirpParams { power, ..self.p.clone() })
    }

    pub fn bandwidth(&self) -> f64 {
        self.p.freq_max_hz - self.p.freq_min_hz
    }

    /// Signed ramp rate in Hz/s.
    pub fn sweep_rate(&self) -> f64 {
        self.p.direction.sign() * self.bandwidth() / self.p.sweep_period_s
    }

    /// Lowest sample rate accepted by [`gen_chirp`].
    pub fn nyquist_rate(&self) -> f64 {
        let p = &self.p;
        2.0 * p.freq_min_hz.abs().max(p.freq_max_hz.abs()).max(p.start_freq_hz.abs() + self.bandwidth())
    }

    /// Splits `t` into (completed sweeps, time into the current sweep).
    fn sweep_position(&self, t: f64) -> (f64, f64) {
        let period = self.p.sweep_period_s;
        let mut sweeps = (t / period).floor();
        let mut tau = t - sweeps * period;
        if tau >= period {
            tau -= period;
            sweeps += 1.0;
        }
        (sweeps, tau.max(0.0))
    }

    /// Phase accumulated over one full sweep, reduced to [0, 2π).
    fn sweep_phase_increment(&self) -> f64 {
        let t = self.p.sweep_period_s;
        (TAU * self.p.start_freq_hz * t + PI * self.sweep_rate() * t * t).rem_euclid(TAU)
    }
}

/// Chirp phase in radians at time `t ≥ 0`.
///
/// Within a sweep the phase is `2π f_I τ + π k τ² + θ_I`, where `τ` is the time
/// since the sweep restarted and `k` the signed ramp rate. In phase-continuous
/// mode the phase reached at the end of each completed sweep is carried over
/// (modulo 2π).
pub fn chirp_phase(t: f64, cfg: &ChirpConfig) -> f64 {
    let (sweeps, tau) = cfg.sweep_position(t);
    let p = &cfg.p;
    let within = TAU * p.start_freq_hz * tau + PI * cfg.sweep_rate() * tau * tau + p.phase_rad;
    if p.phase_continuous && sweeps > 0.0 {
        within + (sweeps * cfg.sweep_phase_increment()).rem_euclid(TAU)
    } else {
        within
    }
}

/// Instantaneous frequency in Hz: `f_I + b·B·τ/T_sweep`.
pub fn instantaneous_freq(t: f64, cfg: &ChirpConfig) -> f64 {
    let (_, tau) = cfg.sweep_position(t);
    cfg.p.start_freq_hz + cfg.sweep_rate() * tau
}

/// Number of samples covering `duration` seconds.
pub fn sample_count(duration: f64, sample_rate: f64) -> usize {
    (duration * sample_rate).round().max(0.0) as usize
}

/// Complex baseband samples on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    sample_rate: f64,
    t0: f64,
    samples: Vec<Complex64>,
}

impl IqBuffer {
    pub fn new(sample_rate: f64, t0: f64, samples: Vec<Complex64>) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(WaveformError::InvalidBuffer(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !t0.is_finite() {
            return Err(WaveformError::InvalidBuffer("non-finite start time".into()));
        }
        Ok(Self { sample_rate, t0, samples })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Time of sample `n`.
    pub fn time_of(&self, n: usize) -> f64 {
        self.t0 + n as f64 / self.sample_rate
    }

    /// Mean of |x|² over the buffer; zero for an empty buffer.
    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Writes interleaved little-endian f32 I/Q pairs to `path` and a text
    /// header to `<path>.hdr`.
    pub fn write_iq32(&self, path: &Path) -> Result<()> {
        let mut w = Iq32Writer::create(path, self.sample_rate, self.t0)?;
        w.append(self)?;
        w.finish()
    }

    /// Reads a buffer written by [`IqBuffer::write_iq32`].
    pub fn read_iq32(path: &Path) -> Result<Self> {
        let hdr_path = header_path(path);
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| WaveformError::Io { path: p, source }
        };
        let header = std::fs::read_to_string(&hdr_path).map_err(io(&hdr_path))?;
        let mut sample_rate = None;
        let mut t0 = None;
        let mut length = None;
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| WaveformError::InvalidBuffer(format!("malformed header line {line:?}")))?;
            let bad = || WaveformError::InvalidBuffer(format!("bad header value {line:?}"));
            match key.trim() {
                "sample_rate" => sample_rate = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
                "t0" => t0 = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
                "length" => length = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
                other => return Err(WaveformError::InvalidBuffer(format!("unknown header key {other:?}"))),
            }
        }
        let missing = |k: &str| WaveformError::InvalidBuffer(format!("header lacks {k}"));
        let sample_rate = sample_rate.ok_or_else(|| missing("sample_rate"))?;
        let t0 = t0.ok_or_else(|| missing("t0"))?;
        let length = length.ok_or_else(|| missing("length"))?;

        let mut raw = Vec::new();
        BufReader::new(File::open(path).map_err(io(path))?).read_to_end(&mut raw).map_err(io(path))?;
        if raw.len() != length * 8 {
            return Err(WaveformError::InvalidBuffer(format!(
                "header says {length} samples but data holds {} bytes",
                raw.len()
            )));
        }
        let samples = raw
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        IqBuffer::new(sample_rate, t0, samples)
    }
}

pub(crate) fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

/// Streams contiguous buffers into one `.iq32` file.
pub struct Iq32Writer {
    path: PathBuf,
    out: BufWriter<File>,
    sample_rate: f64,
    t0: f64,
    len: usize,
}

impl Iq32Writer {
    pub fn create(path: &Path, sample_rate: f64, t0: f64) -> Result<Self> {
        let file =
            File::create(path).map_err(|source| WaveformError::Io { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file), sample_rate, t0, len: 0 })
    }

    pub fn append(&mut self, buf: &IqBuffer) -> Result<()> {
        if buf.sample_rate != self.sample_rate {
            return Err(WaveformError::BufferMismatch(format!(
                "appending {} Hz samples to a {} Hz stream",
                buf.sample_rate, self.sample_rate
            )));
        }
        let expected_t0 = self.t0 + self.len as f64 / self.sample_rate;
        if (buf.t0 - expected_t0).abs() > 0.5 / self.sample_rate {
            return Err(WaveformError::BufferMismatch(format!(
                "buffer starts at {} s, stream continues at {} s",
                buf.t0, expected_t0
            )));
        }
        for s in &buf.samples {
            let mut b = [0u8; 8];
            b[..4].copy_from_slice(&(s.re as f32).to_le_bytes());
            b[4..].copy_from_slice(&(s.im as f32).to_le_bytes());
            self.out.write_all(&b).map_err(|source| WaveformError::Io { path: self.path.clone(), source })?;
        }
        self.len += buf.len();
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| WaveformError::Io { path, source }
        };
        self.out.flush().map_err(io(&self.path))?;
        let hdr = header_path(&self.path);
        let text = format!("sample_rate = {}\nt0 = {}\nlength = {}\n", self.sample_rate, self.t0, self.len);
        std::fs::write(&hdr, text).map_err(io(&hdr))
    }
}

/// Generates `round(duration·fs)` chirp samples starting at t = 0.
pub fn gen_chirp(cfg: &ChirpConfig, sample_rate: f64, duration: f64) -> Result<IqBuffer> {
    gen_chirp_at(cfg, sample_rate, 0.0, duration, Execution::default())
}

/// Generates chirp samples for the window `[t0, t0 + duration)`.
pub fn gen_chirp_at(
    cfg: &ChirpConfig,
    sample_rate: f64,
    t0: f64,
    duration: f64,
    exec: Execution,
) -> Result<IqBuffer> {
    let required = cfg.nyquist_rate();
    if sample_rate.is_nan() || sample_rate < required {
        return Err(WaveformError::NyquistViolation { sample_rate, required });
    }
    if !(t0 >= 0.0 && duration >= 0.0) {
        return Err(WaveformError::InvalidBuffer(format!(
            "chirp window must start at t >= 0 with nonnegative length (t0 {t0}, duration {duration})"
        )));
    }
    let amp = cfg.p.power.sqrt();
    let n = sample_count(duration, sample_rate);
    let mut samples = vec![Complex64::new(0.0, 0.0); n];
    par::for_each_chunk_mut(&mut samples, NOISE_CHUNK, exec, |k, chunk| {
        let base = k * NOISE_CHUNK;
        for (i, s) in chunk.iter_mut().enumerate() {
            let t = t0 + (base + i) as f64 / sample_rate;
            *s = Complex64::from_polar(amp, chirp_phase(t, cfg));
        }
    });
    IqBuffer::new(sample_rate, t0, samples)
}

/// Circular complex Gaussian noise with total variance `noise_power`.
pub fn gen_noise(sample_rate: f64, duration: f64, noise_power: f64, seed: u64) -> Result<IqBuffer> {
    gen_noise_at(sample_rate, 0.0, duration, noise_power, seed, 0, Execution::default())
}

/// Noise for the window `[t0, t0 + duration)`. Distinct `stream` values give
/// independent draws under the same seed.
pub fn gen_noise_at(
    sample_rate: f64,
    t0: f64,
    duration: f64,
    noise_power: f64,
    seed: u64,
    stream: u64,
    exec: Execution,
) -> Result<IqBuffer> {
    if !(noise_power.is_finite() && noise_power > 0.0) {
        return Err(WaveformError::InvalidNoisePower(noise_power));
    }
    let sigma = (noise_power / 2.0).sqrt();
    let n = sample_count(duration, sample_rate);
    let mut samples = vec![Complex64::new(0.0, 0.0); n];
    par::for_each_chunk_mut(&mut samples, NOISE_CHUNK, exec, |k, chunk| {
        let mut rng = rng::stream(seed, Domain::Noise, stream, k as u64);
        for s in chunk.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s = Complex64::new(sigma * re, sigma * im);
        }
    });
    IqBuffer::new(sample_rate, t0, samples)
}

/// One jamming interval, `[start_s, end_s)` at `jnr_db` over the reference
/// noise power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JamInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub jnr_db: f64,
}

impl JamInterval {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Ordered, non-overlapping jamming intervals.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct JammingSchedule {
    intervals: Vec<JamInterval>,
}

impl JammingSchedule {
    pub fn new(intervals: Vec<JamInterval>) -> Result<Self> {
        for (k, iv) in intervals.iter().enumerate() {
            if !(iv.start_s.is_finite() && iv.end_s.is_finite() && iv.jnr_db.is_finite()) {
                return Err(WaveformError::InvalidSchedule(format!("interval {k} has a non-finite field")));
            }
            if iv.start_s < 0.0 {
                return Err(WaveformError::InvalidSchedule(format!("interval {k} starts before t = 0")));
            }
            if iv.end_s <= iv.start_s {
                return Err(WaveformError::InvalidSchedule(format!(
                    "interval {k} must end after it starts ({} .. {})",
                    iv.start_s, iv.end_s
                )));
            }
            if k > 0 {
                let prev = &intervals[k - 1];
                if iv.start_s < prev.start_s {
                    return Err(WaveformError::InvalidSchedule(format!(
                        "intervals must be sorted by start time (interval {k})"
                    )));
                }
                if iv.start_s < prev.end_s {
                    return Err(WaveformError::InvalidSchedule(format!(
                        "interval {k} overlaps interval {}",
                        k - 1
                    )));
                }
            }
        }
        Ok(Self { intervals })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn intervals(&self) -> &[JamInterval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    /// Index of the interval containing `t`.
    pub fn interval_at(&self, t: f64) -> Option<usize> {
        let k = self.intervals.partition_point(|iv| iv.start_s <= t);
        (k > 0 && self.intervals[k - 1].contains(t)).then(|| k - 1)
    }

    /// Scheduled JNR at `t`, if jammed.
    pub fn jnr_at(&self, t: f64) -> Option<f64> {
        self.interval_at(t).map(|k| self.intervals[k].jnr_db)
    }

    pub fn end(&self) -> f64 {
        self.intervals.last().map_or(0.0, |iv| iv.end_s)
    }
}

impl<'de> Deserialize<'de> for JammingSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            intervals: Vec<JamInterval>,
        }
        let raw = Raw::deserialize(d)?;
        JammingSchedule::new(raw.intervals).map_err(serde::de::Error::custom)
    }
}

/// Equal-length intervals separated by `gap_len` (also before the first one),
/// each `jnr_step_db` stronger than the previous.
pub fn build_schedule(
    n_intervals: usize,
    interval_len: f64,
    gap_len: f64,
    jnr_start_db: f64,
    jnr_step_db: f64,
) -> Result<JammingSchedule> {
    if n_intervals == 0 {
        return Err(WaveformError::InvalidSchedule("at least one interval is required".into()));
    }
    if !(interval_len > 0.0 && interval_len.is_finite()) {
        return Err(WaveformError::InvalidSchedule(format!(
            "interval length must be positive, got {interval_len}"
        )));
    }
    if !(gap_len >= 0.0 && gap_len.is_finite()) {
        return Err(WaveformError::InvalidSchedule(format!("gap length must be nonnegative, got {gap_len}")));
    }
    let intervals = (0..n_intervals)
        .map(|k| {
            let start = k as f64 * (interval_len + gap_len) + gap_len;
            JamInterval {
                start_s: start,
                end_s: start + interval_len,
                jnr_db: jnr_start_db + k as f64 * jnr_step_db,
            }
        })
        .collect();
    JammingSchedule::new(intervals)
}

/// Adds the interference to the signal wherever the schedule is active, scaled
/// so that in-interval jammer power over `noise_ref_power` equals the
/// scheduled JNR. The interference buffer's own mean power is the scaling
/// reference.
pub fn combine(
    signal: &IqBuffer,
    interference: &IqBuffer,
    schedule: &JammingSchedule,
    noise_ref_power: f64,
) -> Result<IqBuffer> {
    if signal.sample_rate != interference.sample_rate {
        return Err(WaveformError::BufferMismatch(format!(
            "sample rates differ: signal {} Hz, interference {} Hz",
            signal.sample_rate, interference.sample_rate
        )));
    }
    if (signal.t0 - interference.t0).abs() > 0.5 / signal.sample_rate {
        return Err(WaveformError::BufferMismatch(format!(
            "start times differ: signal {} s, interference {} s",
            signal.t0, interference.t0
        )));
    }
    if !(noise_ref_power.is_finite() && noise_ref_power > 0.0) {
        return Err(WaveformError::InvalidNoisePower(noise_ref_power));
    }

    let mut out = signal.samples.clone();
    if schedule.is_empty() {
        return IqBuffer::new(signal.sample_rate, signal.t0, out);
    }
    let jam_power = interference.mean_power();

    let mut k = 0;
    let ivs = schedule.intervals();
    for (n, s) in out.iter_mut().enumerate() {
        let t = signal.time_of(n);
        while k < ivs.len() && t >= ivs[k].end_s {
            k += 1;
        }
        if k == ivs.len() {
            break;
        }
        if !ivs[k].contains(t) {
            continue;
        }
        let Some(j) = interference.samples.get(n) else {
            return Err(WaveformError::BufferMismatch(format!(
                "interference ends at sample {} but the schedule is active at {t} s",
                interference.len()
            )));
        };
        if jam_power <= 0.0 {
            return Err(WaveformError::BufferMismatch("interference buffer carries no power".into()));
        }
        let g = (db_to_lin(ivs[k].jnr_db) * noise_ref_power / jam_power).sqrt();
        *s += j * g;
    }
    IqBuffer::new(signal.sample_rate, signal.t0, out)
}

pub(crate) fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
