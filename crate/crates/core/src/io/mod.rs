//! File formats: observable and verdict logs, the binary block stream,
//! ground truth and scenario configuration.

pub mod config;
pub mod frame;
pub mod log;

pub use config::{load_scenario, parse_scenario, ConfigError, Scenario};
pub use frame::{
    crc16_xmodem, decode_block, decode_epochs, encode_block, encode_epochs, Block, FrameError, FrameReader,
};
pub use log::{
    parse_jsonl, parse_observable_log, write_jsonl, write_observable_log, LogError, ObservableEpoch, SatId,
};
