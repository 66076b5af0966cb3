//! Scenario engines. Both produce one [`ObservableEpoch`] per epoch period.
//!
//! The fast path derives the jammer-to-noise ratio of each epoch from the
//! schedule. The IQ path synthesises noise plus chirp at the front-end
//! sample rate, runs the AGC loop and the ADC, and measures it. From there on
//! both paths share the same C/N0 and AGC readout models and the same random
//! streams, so their outputs differ only through what the sample chain
//! actually measured.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::frontend::{self, agc_process, full_scale_for_backoff, quantize, AgcState, FrontendError};
use crate::io::config::Scenario;
use crate::io::log::{LogError, ObservableEpoch, SatId, CNO_RANGE_DBHZ};
use crate::metrics::GroundTruth;
use crate::par::{self, Execution};
use crate::rng::{self, Domain};
use crate::tracking::{
    effective_cn0, estimate_cno, js_from_jnr, normalized_power, simulate_blocks, LockStatus, LockTracker,
    TrackingError,
};
use crate::waveform::{combine, gen_chirp_at, gen_noise_at, Iq32Writer, WaveformError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Log(#[from] LogError),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// What the receiver saw in one epoch, before the C/N0 and readout models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontendEpoch {
    /// AGC loop gain at the end of the epoch, dB.
    pub gain_db: f64,
    /// Linear jammer-to-noise ratio seen by the correlators.
    pub jnr: f64,
}

/// Ground truth for a scenario's schedule.
pub fn ground_truth(s: &Scenario) -> GroundTruth {
    GroundTruth::new(s.schedule.clone(), s.epoch_period_s).expect("epoch period validated at load")
}

/// Front end of every epoch taken straight from the schedule: steady-state
/// gain for noise plus the scheduled jammer.
pub fn fast_frontend(s: &Scenario) -> Vec<FrontendEpoch> {
    let agc = s.frontend.agc_config();
    (0..s.epoch_count())
        .map(|w| {
            let jnr = s.schedule.jnr_at(s.epoch_time(w)).map_or(0.0, |db| 10f64.powf(db / 10.0));
            FrontendEpoch {
                gain_db: agc.steady_state_gain_db(s.frontend.noise_power_db + frontend::gain_drop_db(jnr)),
                jnr,
            }
        })
        .collect()
}

/// Runs the sample-level chain window by window. The AGC state carries over
/// between epochs; it starts settled on the noise floor. ADC output is
/// appended to `dump` when given.
pub fn iq_frontend(s: &Scenario, exec: Execution, dump: Option<&Path>) -> Result<Vec<FrontendEpoch>> {
    let fs = s.frontend.bandwidth_hz;
    let period = s.epoch_period_s;
    let noise = s.frontend.noise_power();
    let chirp = s.chirp_config();
    let agc = s.frontend.agc_config();
    let full_scale = full_scale_for_backoff(s.frontend.target_power_db, s.frontend.adc_backoff_db);
    let mut state = AgcState::new(&agc, agc.steady_state_gain_db(s.frontend.noise_power_db));
    let mut writer = dump.map(|p| Iq32Writer::create(p, fs, 0.0)).transpose()?;

    let mut out = Vec::with_capacity(s.epoch_count());
    for w in 0..s.epoch_count() {
        let t0 = s.epoch_time(w);
        let floor = gen_noise_at(fs, t0, period, noise, s.seed, w as u64, exec)?;
        let jam = gen_chirp_at(&chirp, fs, t0, period, exec)?;
        let rx = combine(&floor, &jam, &s.schedule, noise)?;
        let (scaled, trace) = agc_process(&rx, &agc, &mut state)?;
        let adc = quantize(&scaled, s.frontend.adc_bits, full_scale)?;

        // input power as the receiver can know it: ADC power undone by the
        // gain applied to each block
        let block = agc.block_len();
        let input_power = adc
            .buffer
            .samples()
            .chunks(block)
            .zip(&trace)
            .map(|(b, g)| b.iter().map(|x| x.norm_sqr()).sum::<f64>() / 10f64.powf(g.gain_db / 10.0))
            .sum::<f64>()
            / adc.buffer.len() as f64;
        out.push(FrontendEpoch {
            gain_db: trace.last().expect("agc_process emits at least one point").gain_db,
            jnr: (input_power / noise - 1.0).max(0.0),
        });
        if let Some(wr) = writer.as_mut() {
            wr.append(&adc.buffer)?;
        }
    }
    if let Some(wr) = writer {
        wr.finish()?;
    }
    Ok(out)
}

/// C/N0 report of one channel in one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Channel {
    Cno(f64),
    Lost,
}

/// Turns front-end epochs into observables: AGC readout jitter, loss of
/// lock and NWPR estimates on simulated prompts for every satellite.
pub fn observe(s: &Scenario, fe: &[FrontendEpoch], exec: Execution) -> Result<Vec<ObservableEpoch>> {
    let est = s.tracking.estimator();
    let n_sats = s.satellites.len();
    let n_epochs = fe.len();

    // lock state is sequential in time; everything else is independent
    let lock: Vec<Vec<Option<f64>>> = s
        .satellites
        .iter()
        .map(|sat| {
            let model = s.tracking.channel(sat.nominal_cn0_dbhz);
            let mut tracker =
                LockTracker::new(s.tracking.tracking_threshold_dbhz, s.tracking.reacquisition_delay_s);
            fe.iter()
                .enumerate()
                .map(|(w, f)| {
                    let js = if f.jnr > 0.0 {
                        js_from_jnr(10.0 * f.jnr.log10(), sat.nominal_cn0_dbhz, s.frontend.bandwidth_hz)
                    } else {
                        f64::NEG_INFINITY
                    };
                    let eff = effective_cn0(sat.nominal_cn0_dbhz, js, &model);
                    match tracker.step(s.epoch_time(w), eff) {
                        LockStatus::Tracking => Some(eff),
                        LockStatus::Lost => None,
                    }
                })
                .collect()
        })
        .collect();

    let channels = par::map_range(n_sats * n_epochs, exec, |i| {
        let (k, w) = (i / n_epochs, i % n_epochs);
        let Some(eff) = lock[k][w] else {
            return Channel::Lost;
        };
        let prn = s.satellites[k].prn;
        let mut rng = rng::stream(s.seed, Domain::Prompts, prn as u64, w as u64);
        let blocks = simulate_blocks(&mut rng, eff, &est, s.epoch_time(w), prn);
        let mu = normalized_power(&blocks).expect("simulated blocks share M and carry noise");
        match estimate_cno(mu, &est) {
            Ok(c) => Channel::Cno(c.clamp(CNO_RANGE_DBHZ.0, CNO_RANGE_DBHZ.1)),
            Err(_) => Channel::Lost,
        }
    });

    let jitter = s.frontend.readout_jitter_db;
    let epochs = par::map_range(n_epochs, exec, |w| {
        let mut rng = rng::stream(s.seed, Domain::AgcReadout, w as u64, 0);
        let z: f64 = rng.sample(StandardNormal);
        let mut e = ObservableEpoch::new(s.epoch_time(w));
        e.agc_db = Some(fe[w].gain_db + jitter * z);
        for (k, sat) in s.satellites.iter().enumerate() {
            match channels[k * n_epochs + w] {
                Channel::Cno(c) => {
                    e.cno.insert(SatId(sat.prn), c);
                }
                Channel::Lost => e.lost.push(SatId(sat.prn)),
            }
        }
        e.lost.sort();
        e.to_wire_precision()
    });
    Ok(epochs)
}

/// Observables on the fast path.
pub fn simulate_fast(s: &Scenario, exec: Execution) -> Result<Vec<ObservableEpoch>> {
    observe(s, &fast_frontend(s), exec)
}

/// Observables on the IQ path.
pub fn simulate_iq(s: &Scenario, exec: Execution, dump: Option<&Path>) -> Result<Vec<ObservableEpoch>> {
    let fe = iq_frontend(s, exec, dump)?;
    observe(s, &fe, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::config::parse_scenario;
    use crate::io::log::validate_epochs;

    fn short() -> Scenario {
        parse_scenario(
            "seed = 7\n[schedule]\nn_intervals = 2\ninterval_len_s = 10.0\ngap_len_s = 40.0\njnr_start_db = 10.0\n",
            "t",
        )
        .unwrap()
    }

    #[test]
    fn fast_path_shape() {
        let s = short();
        let e = simulate_fast(&s, Execution::default()).unwrap();
        assert_eq!(e.len(), 140);
        validate_epochs(&e).unwrap();
        for ep in &e {
            assert_eq!(ep.cno.len() + ep.lost.len(), 8);
        }
        let clean = e[10].agc_db.unwrap();
        let jammed = e[45].agc_db.unwrap();
        assert!((clean - 30.0).abs() < 1.5);
        assert!((clean - jammed - 10.0 * 11f64.log10()).abs() < 1.5);
    }

    #[test]
    fn execution_modes_agree() {
        let s = short();
        assert_eq!(
            simulate_fast(&s, Execution::Sequential).unwrap(),
            simulate_fast(&s, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn lost_satellites_reacquire_after_delay() {
        let s = parse_scenario(
            "[schedule]\nintervals = [{ start_s = 40.0, end_s = 50.0, jnr_db = 40.0 }]\n",
            "t",
        )
        .unwrap();
        let e = simulate_fast(&s, Execution::default()).unwrap();
        assert!(e[45].cno.is_empty());
        assert_eq!(e[45].lost.len(), 8);
        assert_eq!(e[54].lost.len(), 8);
        assert!(e[55].lost.is_empty());
    }

    #[test]
    fn nominal_epochs_near_configured_cno() {
        let s = short();
        let e = simulate_fast(&s, Execution::default()).unwrap();
        for sat in &s.satellites {
            let xs: Vec<f64> = e[..40].iter().map(|ep| ep.cno[&sat.id()]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!((mean - sat.nominal_cn0_dbhz).abs() < 1.0, "{} {mean}", sat.id());
        }
    }
}
