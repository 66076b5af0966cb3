//! Per-satellite tracking stage: prompt correlator statistics and C/N0
//! estimation by the narrowband/wideband power ratio.
//!
//! There is no code or carrier loop here. Prompt outputs are drawn from their
//! statistical model at a given C/N0, and jamming enters through the
//! effective-C/N0 law.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Domain};

#[derive(Debug, Error, PartialEq)]
pub enum TrackingError {
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid channel model: {0}")]
    InvalidChannel(String),
    #[error("invalid correlator block: {0}")]
    InvalidBlock(String),
    #[error("no correlator blocks to average")]
    NoBlocks,
    #[error("block {index} has M = {found}, expected {expected}")]
    MismatchedBlocks { index: usize, expected: usize, found: usize },
    #[error("block {0} has zero wideband power")]
    DegenerateBlock(usize),
    #[error("normalized power {mu} is out of range: {reason}")]
    OutOfRange { mu: f64, reason: RangeFault },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeFault {
    BelowNoise,
    Saturated,
}

impl std::fmt::Display for RangeFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RangeFault::BelowNoise => "unresolvable, below noise",
            RangeFault::Saturated => "saturated",
        })
    }
}

pub type Result<T> = std::result::Result<T, TrackingError>;

/// M prompt correlator outputs of one satellite channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorBlock {
    ip: Vec<f64>,
    qp: Vec<f64>,
    pub t: f64,
    pub sat: u8,
}

impl CorrelatorBlock {
    pub fn new(ip: Vec<f64>, qp: Vec<f64>, t: f64, sat: u8) -> Result<Self> {
        if ip.len() != qp.len() {
            return Err(TrackingError::InvalidBlock(format!(
                "I has {} outputs, Q has {}",
                ip.len(),
                qp.len()
            )));
        }
        if ip.len() < 2 {
            return Err(TrackingError::InvalidBlock(format!("need at least 2 outputs, got {}", ip.len())));
        }
        Ok(Self { ip, qp, t, sat })
    }

    pub fn ip(&self) -> &[f64] {
        &self.ip
    }

    pub fn qp(&self) -> &[f64] {
        &self.qp
    }

    pub fn m(&self) -> usize {
        self.ip.len()
    }

    /// Narrowband over wideband power of this block.
    fn power_ratio(&self) -> Option<f64> {
        let si: f64 = self.ip.iter().sum();
        let sq: f64 = self.qp.iter().sum();
        let wide: f64 = self.ip.iter().zip(&self.qp).map(|(i, q)| i * i + q * q).sum();
        (wide > 0.0).then(|| (si * si + sq * sq) / wide)
    }
}

/// T, M and K of the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnoEstimatorConfig {
    /// Code period in seconds.
    pub code_period_s: f64,
    /// Prompt outputs summed coherently per block.
    pub coherent_blocks: usize,
    /// Blocks averaged per estimate.
    pub averaging_k: usize,
}

impl Default for CnoEstimatorConfig {
    fn default() -> Self {
        Self { code_period_s: 0.001, coherent_blocks: 20, averaging_k: 50 }
    }
}

impl CnoEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.code_period_s.is_finite() && self.code_period_s > 0.0) {
            return Err(TrackingError::InvalidConfig(format!(
                "code period must be positive, got {}",
                self.code_period_s
            )));
        }
        if self.coherent_blocks < 2 {
            return Err(TrackingError::InvalidConfig(format!(
                "M must be at least 2, got {}",
                self.coherent_blocks
            )));
        }
        if self.averaging_k < 1 {
            return Err(TrackingError::InvalidConfig("K must be at least 1".into()));
        }
        Ok(())
    }

    /// Time spanned by one estimate, K·M·T.
    pub fn span_s(&self) -> f64 {
        (self.averaging_k * self.coherent_blocks) as f64 * self.code_period_s
    }
}

/// Statistical stand-in for one satellite's tracking channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub nominal_cn0_dbhz: f64,
    /// Spectral separation ("anti-jam quality") factor of the spreading code
    /// against the interference.
    pub aj_quality_q: f64,
    pub chip_rate: f64,
}

pub const GPS_CA_CHIP_RATE: f64 = 1.023e6;

impl ChannelModel {
    pub fn new(nominal_cn0_dbhz: f64, aj_quality_q: f64, chip_rate: f64) -> Result<Self> {
        let m = Self { nominal_cn0_dbhz, aj_quality_q, chip_rate };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(20.0..=55.0).contains(&self.nominal_cn0_dbhz) {
            return Err(TrackingError::InvalidChannel(format!(
                "nominal C/N0 must lie in [20, 55] dB-Hz, got {}",
                self.nominal_cn0_dbhz
            )));
        }
        if !(self.aj_quality_q.is_finite() && self.aj_quality_q > 0.0) {
            return Err(TrackingError::InvalidChannel(format!(
                "Q must be positive, got {}",
                self.aj_quality_q
            )));
        }
        if !(self.chip_rate.is_finite() && self.chip_rate > 0.0) {
            return Err(TrackingError::InvalidChannel(format!(
                "chip rate must be positive, got {}",
                self.chip_rate
            )));
        }
        Ok(())
    }
}

/// C/N0 after jamming at jammer-to-signal ratio `js_db`:
/// `1 / (1/(C/N0) + (J/S)/(Q·Rc))`, in dB-Hz.
pub fn effective_cn0(nominal_cn0_dbhz: f64, js_db: f64, model: &ChannelModel) -> f64 {
    let jam_term = 10f64.powf(js_db / 10.0) / (model.aj_quality_q * model.chip_rate);
    if jam_term == 0.0 {
        return nominal_cn0_dbhz;
    }
    -10.0 * (10f64.powf(-nominal_cn0_dbhz / 10.0) + jam_term).log10()
}

/// Jammer-to-signal ratio for a jammer `jnr_db` above the noise in
/// `noise_bandwidth_hz`, against a satellite received at `cn0_dbhz`.
pub fn js_from_jnr(jnr_db: f64, cn0_dbhz: f64, noise_bandwidth_hz: f64) -> f64 {
    jnr_db + 10.0 * noise_bandwidth_hz.log10() - cn0_dbhz
}

/// Prompt amplitude `√(2·T·C/N0)` for unit-variance I and Q noise.
pub fn prompt_amplitude(cn0_dbhz: f64, code_period_s: f64) -> f64 {
    (2.0 * code_period_s * 10f64.powf(cn0_dbhz / 10.0)).sqrt()
}

/// Draws one block of M prompt outputs. The data bit is constant within the
/// block and random across blocks.
pub fn draw_block<R: Rng + ?Sized>(
    rng: &mut R,
    amplitude: f64,
    m: usize,
    t: f64,
    sat: u8,
) -> CorrelatorBlock {
    let d = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut ip = Vec::with_capacity(m);
    let mut qp = Vec::with_capacity(m);
    for _ in 0..m {
        let n: f64 = rng.sample(StandardNormal);
        let q: f64 = rng.sample(StandardNormal);
        ip.push(amplitude * d + n);
        qp.push(q);
    }
    CorrelatorBlock { ip, qp, t, sat }
}

/// One seeded block of prompt outputs at `cn0_dbhz`.
pub fn simulate_prompts(cn0_dbhz: f64, cfg: &CnoEstimatorConfig, seed: u64) -> CorrelatorBlock {
    let mut rng = rng::stream(seed, Domain::Prompts, 0, 0);
    let a = prompt_amplitude(cn0_dbhz, cfg.code_period_s);
    draw_block(&mut rng, a, cfg.coherent_blocks, 0.0, 0)
}

/// K consecutive blocks from `rng`.
pub fn simulate_blocks<R: Rng + ?Sized>(
    rng: &mut R,
    cn0_dbhz: f64,
    cfg: &CnoEstimatorConfig,
    t0: f64,
    sat: u8,
) -> Vec<CorrelatorBlock> {
    let a = prompt_amplitude(cn0_dbhz, cfg.code_period_s);
    let block_span = cfg.coherent_blocks as f64 * cfg.code_period_s;
    (0..cfg.averaging_k)
        .map(|k| draw_block(rng, a, cfg.coherent_blocks, t0 + k as f64 * block_span, sat))
        .collect()
}

/// Average normalized power over K blocks.
pub fn normalized_power(blocks: &[CorrelatorBlock]) -> Result<f64> {
    let first = blocks.first().ok_or(TrackingError::NoBlocks)?;
    let m = first.m();
    let mut acc = 0.0;
    for (k, b) in blocks.iter().enumerate() {
        if b.m() != m {
            return Err(TrackingError::MismatchedBlocks { index: k, expected: m, found: b.m() });
        }
        acc += b.power_ratio().ok_or(TrackingError::DegenerateBlock(k))?;
    }
    Ok(acc / blocks.len() as f64)
}

/// Inverts the normalized power into C/N0 (dB-Hz):
/// `10·log10((1/T)·(μ − 1)/(M − μ))`.
pub fn estimate_cno(mu_na: f64, cfg: &CnoEstimatorConfig) -> Result<f64> {
    let m = cfg.coherent_blocks as f64;
    if mu_na.is_nan() || mu_na <= 1.0 {
        return Err(TrackingError::OutOfRange { mu: mu_na, reason: RangeFault::BelowNoise });
    }
    if mu_na >= m {
        return Err(TrackingError::OutOfRange { mu: mu_na, reason: RangeFault::Saturated });
    }
    Ok(10.0 * ((mu_na - 1.0) / (m - mu_na) / cfg.code_period_s).log10())
}

/// Whether a channel reports C/N0 this epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockStatus {
    Tracking,
    Lost,
}

/// Loss-of-lock model: a channel drops when its effective C/N0 falls below
/// the tracking threshold and comes back only after the C/N0 has stayed above
/// it for the reacquisition delay.
#[derive(Debug, Clone, PartialEq)]
pub struct LockTracker {
    threshold_dbhz: f64,
    reacquisition_delay_s: f64,
    lost: bool,
    good_since: Option<f64>,
}

impl LockTracker {
    pub fn new(threshold_dbhz: f64, reacquisition_delay_s: f64) -> Self {
        Self { threshold_dbhz, reacquisition_delay_s, lost: false, good_since: None }
    }

    pub fn step(&mut self, t: f64, effective_cn0_dbhz: f64) -> LockStatus {
        if effective_cn0_dbhz < self.threshold_dbhz {
            self.lost = true;
            self.good_since = None;
            return LockStatus::Lost;
        }
        if !self.lost {
            return LockStatus::Tracking;
        }
        let since = *self.good_since.get_or_insert(t);
        // epoch times are sums of the epoch period; absorb rounding
        if t - since + 1e-9 >= self.reacquisition_delay_s {
            self.lost = false;
            self.good_since = None;
            LockStatus::Tracking
        } else {
            LockStatus::Lost
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(q: f64) -> ChannelModel {
        ChannelModel::new(45.0, q, GPS_CA_CHIP_RATE).unwrap()
    }

    #[test]
    fn effective_cn0_examples() {
        let m = model(1.0);
        assert_eq!(effective_cn0(45.0, f64::NEG_INFINITY, &m), 45.0);
        // analytic: -10·log10(10^-4.5 + 10^3 / 1.023e6)
        let expected = -10.0 * (10f64.powf(-4.5) + 1000.0 / 1.023e6).log10();
        let got = effective_cn0(45.0, 30.0, &m);
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 29.96).abs() < 0.01, "{got}");
    }

    #[test]
    fn effective_cn0_monotone_grid() {
        let m = model(1.5);
        let mut js = -40.0;
        while js < 80.0 {
            assert!(effective_cn0(45.0, js + 5.0, &m) < effective_cn0(45.0, js, &m));
            js += 0.5;
        }
    }

    #[test]
    fn amplitude_law() {
        let a = prompt_amplitude(45.0, 0.001);
        assert!((a - (2.0 * 0.001 * 10f64.powf(4.5)).sqrt()).abs() < 1e-12);
        assert!((a - 7.95).abs() < 0.01);
    }

    #[test]
    fn prompts_deterministic() {
        let cfg = CnoEstimatorConfig::default();
        assert_eq!(simulate_prompts(40.0, &cfg, 3), simulate_prompts(40.0, &cfg, 3));
        assert_ne!(simulate_prompts(40.0, &cfg, 3), simulate_prompts(40.0, &cfg, 4));
    }

    #[test]
    fn noise_only_prompts_have_unit_moments() {
        let cfg = CnoEstimatorConfig { averaging_k: 5000, ..Default::default() };
        let mut rng = rng::stream(1, Domain::Prompts, 0, 0);
        let blocks = simulate_blocks(&mut rng, f64::NEG_INFINITY, &cfg, 0.0, 1);
        let all: Vec<f64> = blocks.iter().flat_map(|b| b.ip().iter().chain(b.qp()).copied()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn normalized_power_examples() {
        let b = CorrelatorBlock::new(vec![3.0; 20], vec![0.0; 20], 0.0, 1).unwrap();
        assert_eq!(normalized_power(&[b]).unwrap(), 20.0);
        let b = CorrelatorBlock::new(vec![1.0, 1.0], vec![0.0, 0.0], 0.0, 1).unwrap();
        assert_eq!(normalized_power(&[b]).unwrap(), 2.0);
        let z = CorrelatorBlock::new(vec![0.0; 4], vec![0.0; 4], 0.0, 1).unwrap();
        assert_eq!(normalized_power(&[z]), Err(TrackingError::DegenerateBlock(0)));
        assert_eq!(normalized_power(&[]), Err(TrackingError::NoBlocks));
        assert!(CorrelatorBlock::new(vec![1.0], vec![1.0], 0.0, 1).is_err());
        assert!(CorrelatorBlock::new(vec![1.0; 3], vec![1.0; 2], 0.0, 1).is_err());
    }

    #[test]
    fn pure_noise_normalized_power_near_one() {
        let cfg = CnoEstimatorConfig { averaging_k: 10_000, ..Default::default() };
        // per block the ratio is M·Beta(1, M − 1): mean 1, sd ≈ 0.95
        let m = cfg.coherent_blocks as f64;
        let sd = (m * m * (m - 1.0) / (m * m * (m + 1.0))).sqrt() / (cfg.averaging_k as f64).sqrt();
        for seed in 0..5 {
            let mut rng = rng::stream(seed, Domain::Prompts, 0, 0);
            let blocks = simulate_blocks(&mut rng, f64::NEG_INFINITY, &cfg, 0.0, 1);
            let mu = normalized_power(&blocks).unwrap();
            assert!((mu - 1.0).abs() < 4.0 * sd, "seed {seed}: {mu}");
            if seed == 0 {
                assert!((mu - 1.0).abs() < 0.02, "{mu}");
            }
        }
    }

    #[test]
    fn estimator_arithmetic_and_bounds() {
        let cfg = CnoEstimatorConfig::default();
        assert!((estimate_cno(10.5, &cfg).unwrap() - 30.0).abs() < 1e-12);
        assert!(matches!(
            estimate_cno(1.0, &cfg),
            Err(TrackingError::OutOfRange { reason: RangeFault::BelowNoise, .. })
        ));
        assert!(matches!(
            estimate_cno(20.0, &cfg),
            Err(TrackingError::OutOfRange { reason: RangeFault::Saturated, .. })
        ));
        assert!(estimate_cno(f64::NAN, &cfg).is_err());
        // approaching 1 from above diverges downward without producing -inf
        let near = estimate_cno(1.0 + 1e-12, &cfg).unwrap();
        assert!(near.is_finite() && near < -80.0);
    }

    #[test]
    fn lock_tracker_reacquires_after_delay() {
        let mut lt = LockTracker::new(25.0, 5.0);
        assert_eq!(lt.step(0.0, 40.0), LockStatus::Tracking);
        assert_eq!(lt.step(1.0, 20.0), LockStatus::Lost);
        for t in 2..7 {
            assert_eq!(lt.step(t as f64, 40.0), LockStatus::Lost, "t = {t}");
        }
        assert_eq!(lt.step(7.0, 40.0), LockStatus::Tracking);
        let mut lt = LockTracker::new(25.0, 0.0);
        lt.step(0.0, 10.0);
        assert_eq!(lt.step(1.0, 40.0), LockStatus::Tracking);
    }

    #[test]
    fn config_validation() {
        let mut c = CnoEstimatorConfig::default();
        assert!(c.validate().is_ok());
        c.coherent_blocks = 1;
        assert!(c.validate().is_err());
        assert!(ChannelModel::new(60.0, 1.5, GPS_CA_CHIP_RATE).is_err());
        assert!(ChannelModel::new(45.0, 0.0, GPS_CA_CHIP_RATE).is_err());
    }
}
