//! Receiver front end: a first-order log-domain AGC loop ahead of a uniform
//! ADC. The AGC gain is the observable that drops under jamming.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::IqBuffer;

#[derive(Debug, Error, PartialEq)]
pub enum FrontendError {
    #[error("invalid AGC configuration: {0}")]
    InvalidConfig(String),
    #[error("AGC input is empty")]
    EmptyInput,
    #[error("block length {block_len} exceeds input length {input_len}")]
    BlockTooLong { block_len: usize, input_len: usize },
    #[error("ADC resolution must be 2..=16 bits, got {0}")]
    InvalidBits(u32),
    #[error("ADC full scale must be positive, got {0}")]
    InvalidFullScale(f64),
}

pub type Result<T> = std::result::Result<T, FrontendError>;

/// Loop parameters of the AGC.
#[derive(Debug, Clone, PartialEq)]
pub struct AgcConfig {
    target_power_db: f64,
    loop_gain: f64,
    block_len: usize,
    gain_min_db: f64,
    gain_max_db: f64,
}

impl AgcConfig {
    pub fn new(
        target_power_db: f64,
        loop_gain: f64,
        block_len: usize,
        gain_min_db: f64,
        gain_max_db: f64,
    ) -> Result<Self> {
        if !(loop_gain > 0.0 && loop_gain <= 1.0) {
            return Err(FrontendError::InvalidConfig(format!(
                "loop gain must lie in (0, 1], got {loop_gain}"
            )));
        }
        if block_len == 0 {
            return Err(FrontendError::InvalidConfig("block length must be at least one sample".into()));
        }
        if !(gain_min_db.is_finite() && gain_max_db.is_finite() && gain_min_db < gain_max_db) {
            return Err(FrontendError::InvalidConfig(format!(
                "gain clamp [{gain_min_db}, {gain_max_db}] dB is empty"
            )));
        }
        if !target_power_db.is_finite() {
            return Err(FrontendError::InvalidConfig("non-finite target power".into()));
        }
        Ok(Self { target_power_db, loop_gain, block_len, gain_min_db, gain_max_db })
    }

    pub fn target_power_db(&self) -> f64 {
        self.target_power_db
    }

    pub fn loop_gain(&self) -> f64 {
        self.loop_gain
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn gain_min_db(&self) -> f64 {
        self.gain_min_db
    }

    pub fn gain_max_db(&self) -> f64 {
        self.gain_max_db
    }

    pub fn clamp(&self, gain_db: f64) -> f64 {
        gain_db.clamp(self.gain_min_db, self.gain_max_db)
    }

    /// Fixed point of the loop for a stationary input of `input_power_db`.
    pub fn steady_state_gain_db(&self, input_power_db: f64) -> f64 {
        self.clamp(self.target_power_db - input_power_db)
    }
}

/// Running state of the loop between buffers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgcState {
    pub gain_db: f64,
    pub last_update_t: f64,
}

impl AgcState {
    pub fn new(cfg: &AgcConfig, gain_db: f64) -> Self {
        Self { gain_db: cfg.clamp(gain_db), last_update_t: 0.0 }
    }
}

/// Gain after the update at the end of a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPoint {
    pub t: f64,
    pub gain_db: f64,
}

/// Runs the AGC over `input`, one gain update per block.
///
/// For each block the mean input power `P` (dB) moves the gain by
/// `−α·(P + gain − target)`, clamped, and the block is scaled by the updated
/// gain. A trailing partial block is processed like a full one.
pub fn agc_process(
    input: &IqBuffer,
    cfg: &AgcConfig,
    state: &mut AgcState,
) -> Result<(IqBuffer, Vec<GainPoint>)> {
    if input.is_empty() {
        return Err(FrontendError::EmptyInput);
    }
    if cfg.block_len > input.len() {
        return Err(FrontendError::BlockTooLong { block_len: cfg.block_len, input_len: input.len() });
    }
    let fs = input.sample_rate();
    let mut out = Vec::with_capacity(input.len());
    let mut trace = Vec::with_capacity(input.len().div_ceil(cfg.block_len));
    for (k, block) in input.samples().chunks(cfg.block_len).enumerate() {
        let power = block.iter().map(|s| s.norm_sqr()).sum::<f64>() / block.len() as f64;
        state.gain_db = if power > 0.0 {
            let error = 10.0 * power.log10() + state.gain_db - cfg.target_power_db;
            cfg.clamp(state.gain_db - cfg.loop_gain * error)
        } else {
            cfg.gain_max_db
        };
        let scale = 10f64.powf(state.gain_db / 20.0);
        out.extend(block.iter().map(|s| s * scale));
        let end = k * cfg.block_len + block.len();
        state.last_update_t = input.t0() + end as f64 / fs;
        trace.push(GainPoint { t: state.last_update_t, gain_db: state.gain_db });
    }
    let scaled = IqBuffer::new(fs, input.t0(), out).expect("rate and t0 come from a valid buffer");
    Ok((scaled, trace))
}

/// Steady-state AGC gain reduction caused by a jammer at linear
/// jammer-to-noise ratio `jnr`.
pub fn gain_drop_db(jnr: f64) -> f64 {
    10.0 * (1.0 + jnr).log10()
}

/// ADC output and saturation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub buffer: IqBuffer,
    /// Fraction of samples where I or Q saturated.
    pub clip_fraction: f64,
}

/// Full scale placing a complex input of `power_db` `backoff_db` below
/// clipping, measured on the total RMS amplitude.
pub fn full_scale_for_backoff(power_db: f64, backoff_db: f64) -> f64 {
    10f64.powf(power_db / 20.0) * 10f64.powf(backoff_db / 20.0)
}

/// Uniform mid-rise quantizer with `2^bits` levels on `[-full_scale, full_scale]`.
pub fn quantize(input: &IqBuffer, bits: u32, full_scale: f64) -> Result<Quantized> {
    if !(2..=16).contains(&bits) {
        return Err(FrontendError::InvalidBits(bits));
    }
    if !(full_scale.is_finite() && full_scale > 0.0) {
        return Err(FrontendError::InvalidFullScale(full_scale));
    }
    let levels = (1u32 << bits) as f64;
    let step = 2.0 * full_scale / levels;
    let top = levels / 2.0 - 1.0;
    let q = |x: f64| -> (f64, bool) {
        let clipped = x.abs() >= full_scale;
        let code = (x / step).floor().clamp(-levels / 2.0, top);
        ((code + 0.5) * step, clipped)
    };
    let mut clipped = 0usize;
    let samples: Vec<Complex64> = input
        .samples()
        .iter()
        .map(|s| {
            let (re, ci) = q(s.re);
            let (im, cq) = q(s.im);
            if ci || cq {
                clipped += 1;
            }
            Complex64::new(re, im)
        })
        .collect();
    let clip_fraction = if samples.is_empty() { 0.0 } else { clipped as f64 / samples.len() as f64 };
    Ok(Quantized {
        buffer: IqBuffer::new(input.sample_rate(), input.t0(), samples)
            .expect("rate and t0 come from a valid buffer"),
        clip_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::gen_noise;

    fn constant(power: f64, n: usize) -> IqBuffer {
        IqBuffer::new(1e3, 0.0, vec![Complex64::new(power.sqrt(), 0.0); n]).unwrap()
    }

    #[test]
    fn converges_to_target() {
        // 10 ms blocks at 2 MHz, 50 updates
        let cfg = AgcConfig::new(10.0, 0.5, 20_000, -20.0, 60.0).unwrap();
        let input = gen_noise(2e6, 0.5, 1.0, 2).unwrap();
        let mut st = AgcState::new(&cfg, 0.0);
        let (_, trace) = agc_process(&input, &cfg, &mut st).unwrap();
        assert_eq!(trace.len(), 50);
        assert!((trace[49].gain_db - 10.0).abs() < 0.1, "{:?}", trace[49]);
    }

    #[test]
    fn unit_loop_gain_settles_in_one_block() {
        let cfg = AgcConfig::new(3.0, 1.0, 10, -20.0, 60.0).unwrap();
        let input = constant(4.0, 30);
        let mut st = AgcState::new(&cfg, 25.0);
        let (out, trace) = agc_process(&input, &cfg, &mut st).unwrap();
        let expected = 3.0 - 10.0 * 4f64.log10();
        assert!((trace[0].gain_db - expected).abs() < 1e-12);
        assert!((out.mean_power() - 10f64.powf(0.3)).abs() < 1e-9);
    }

    #[test]
    fn clamp_holds() {
        let cfg = AgcConfig::new(0.0, 1.0, 10, -5.0, 5.0).unwrap();
        let mut st = AgcState::new(&cfg, 0.0);
        let (_, tr) = agc_process(&constant(1e6, 50), &cfg, &mut st).unwrap();
        assert!(tr.iter().all(|p| p.gain_db == -5.0));
        let (_, tr) = agc_process(&constant(1e-9, 50), &cfg, &mut st).unwrap();
        assert!(tr.iter().all(|p| p.gain_db == 5.0));
        let zeros = IqBuffer::new(1e3, 0.0, vec![Complex64::new(0.0, 0.0); 20]).unwrap();
        let (_, tr) = agc_process(&zeros, &cfg, &mut st).unwrap();
        assert_eq!(tr[0].gain_db, 5.0);
    }

    #[test]
    fn errors() {
        let cfg = AgcConfig::new(0.0, 0.5, 100, -5.0, 5.0).unwrap();
        let mut st = AgcState::new(&cfg, 0.0);
        let empty = IqBuffer::new(1e3, 0.0, vec![]).unwrap();
        assert_eq!(agc_process(&empty, &cfg, &mut st).unwrap_err(), FrontendError::EmptyInput);
        assert!(matches!(
            agc_process(&constant(1.0, 10), &cfg, &mut st),
            Err(FrontendError::BlockTooLong { .. })
        ));
        assert!(AgcConfig::new(0.0, 0.0, 10, -5.0, 5.0).is_err());
        assert!(AgcConfig::new(0.0, 1.5, 10, -5.0, 5.0).is_err());
        assert!(AgcConfig::new(0.0, 0.5, 10, 5.0, 5.0).is_err());
    }

    #[test]
    fn quantizer_small_signal_within_lsb() {
        let fs = 1.0;
        let bits = 8;
        let step = 2.0 * fs / 256.0;
        let xs: Vec<Complex64> = (0..200)
            .map(|k| {
                let v = (k as f64 / 200.0 - 0.5) * 2.0 * fs / 256.0;
                Complex64::new(v, -v)
            })
            .collect();
        let input = IqBuffer::new(1.0, 0.0, xs).unwrap();
        let q = quantize(&input, bits, fs).unwrap();
        for (a, b) in q.buffer.samples().iter().zip(input.samples()) {
            assert!((a.re - b.re).abs() <= step);
            assert!((a.im - b.im).abs() <= step);
        }
        assert_eq!(q.clip_fraction, 0.0);
    }

    /// Complementary error function, |relative error| < 1.2e-7.
    fn erfc(x: f64) -> f64 {
        let z = x.abs();
        let t = 1.0 / (1.0 + 0.5 * z);
        let poly = -z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
        let r = t * poly.exp();
        if x >= 0.0 {
            r
        } else {
            2.0 - r
        }
    }

    /// Probability that I or Q of circular Gaussian noise at `power_db`
    /// reaches the full scale set `backoff_db` above it.
    fn clip_probability(backoff_db: f64) -> f64 {
        // per-component threshold in standard deviations
        let a = 10f64.powf(backoff_db / 20.0) * 2f64.sqrt();
        let one = erfc(a / 2f64.sqrt());
        1.0 - (1.0 - one).powi(2)
    }

    #[test]
    fn gaussian_clip_fraction_matches_tail_oracle() {
        let target = 30.0;
        let input = gen_noise(2e6, 0.5, 10f64.powf(target / 10.0), 8).unwrap();
        let q = quantize(&input, 8, full_scale_for_backoff(target, 12.0)).unwrap();
        assert!(clip_probability(12.0) < 1e-6);
        assert!(q.clip_fraction < 1e-3, "{}", q.clip_fraction);

        // where clipping is common the measured fraction follows the oracle
        let n = input.len() as f64;
        for backoff in [0.0, 3.0, 6.0] {
            let q = quantize(&input, 8, full_scale_for_backoff(target, backoff)).unwrap();
            let p = clip_probability(backoff);
            let sd = (p * (1.0 - p) / n).sqrt();
            assert!((q.clip_fraction - p).abs() < 5.0 * sd, "{backoff} dB: {} vs {p}", q.clip_fraction);
        }
    }

    fn settle(cfg: &AgcConfig, jnr_db: f64, seed: u64) -> f64 {
        let fs = 2e6;
        let power = 1.0 + 10f64.powf(jnr_db / 10.0);
        let input = gen_noise(fs, 0.3, power, seed).unwrap();
        let mut st = AgcState::new(cfg, 0.0);
        let (_, trace) = agc_process(&input, cfg, &mut st).unwrap();
        let tail = &trace[trace.len() - 10..];
        tail.iter().map(|p| p.gain_db).sum::<f64>() / tail.len() as f64
    }

    #[test]
    fn closed_loop_gain_drop_law() {
        let cfg = AgcConfig::new(30.0, 0.5, 20_000, -30.0, 60.0).unwrap();
        let base = settle(&cfg, f64::NEG_INFINITY, 1);
        let mut last = base;
        for jnr in [0.0, 5.0, 10.0, 20.0] {
            let g = settle(&cfg, jnr, 2);
            let drop = base - g;
            let expected = gain_drop_db(10f64.powf(jnr / 10.0));
            assert!((drop - expected).abs() < 0.3, "{jnr} dB: {drop} vs {expected}");
            assert!(g < last);
            last = g;
        }
        assert!((gain_drop_db(10f64.powf(0.5)) - 6.19).abs() < 0.01);
    }

    #[test]
    fn gain_recovers_after_interference() {
        let fs = 2e6;
        let cfg = AgcConfig::new(30.0, 0.5, 20_000, -30.0, 60.0).unwrap();
        let mut st = AgcState::new(&cfg, 30.0);
        let clean = gen_noise(fs, 0.2, 1.0, 3).unwrap();
        let (_, before) = agc_process(&clean, &cfg, &mut st).unwrap();
        let jammed = gen_noise(fs, 0.2, 101.0, 4).unwrap();
        agc_process(&jammed, &cfg, &mut st).unwrap();
        let after = gen_noise(fs, 0.2, 1.0, 5).unwrap();
        let (_, rec) = agc_process(&after, &cfg, &mut st).unwrap();

        let g: Vec<f64> = before.iter().map(|p| p.gain_db).collect();
        let mu = g.iter().sum::<f64>() / g.len() as f64;
        let sd = (g.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / g.len() as f64).sqrt();
        // a 20 dB step decays by α per block: within 3σ after 10 blocks (0.1 s)
        for p in &rec[10..] {
            assert!((p.gain_db - mu).abs() <= 3.0 * sd.max(0.02), "{p:?} vs {mu} ± {sd}");
        }
    }

    #[test]
    fn quantizer_saturates() {
        let q = quantize(&constant(4.0, 100), 4, 1.0).unwrap();
        assert_eq!(q.clip_fraction, 1.0);
        let top = q.buffer.samples()[0].re;
        assert!((top - (1.0 - 1.0 / 16.0)).abs() < 1e-12);
        assert_eq!(quantize(&constant(1.0, 1), 1, 1.0), Err(FrontendError::InvalidBits(1)));
        assert_eq!(quantize(&constant(1.0, 1), 17, 1.0), Err(FrontendError::InvalidBits(17)));
    }
}
