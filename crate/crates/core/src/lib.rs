//! Simulation and detection of linear-chirp jamming against GNSS receivers.
//!
//! Two observables are modelled: the front-end AGC gain and per-satellite
//! C/N0. Scenarios run either at observable level (fast) or through a
//! sample-level chain of noise, chirp, AGC and ADC. The AGC-threshold and
//! C/N0-drop detectors consume the observables, and [`metrics`] scores their
//! flags against the jamming schedule.
//!
//! Parallel execution is on by default (`parallel` feature); every entry
//! point that fans out takes an [`Execution`] and gives identical results
//! in both modes.

pub mod detect;
pub mod frontend;
pub mod io;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod tracking;
pub mod waveform;

pub use detect::{AgcCalibration, CnoCalibration, DetectorVerdict};
pub use io::{ObservableEpoch, SatId, Scenario};
pub use metrics::{GroundTruth, MetricsReport};
pub use par::Execution;
pub use waveform::{ChirpConfig, IqBuffer, JammingSchedule};
