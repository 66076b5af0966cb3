use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use jamwatch::detect::DetectorOptions;
use jamwatch::io::{load_scenario, Scenario};
use jamwatch::pipeline::{self, CalibrationParams, PlotSeries, SimMode};
use jamwatch::Execution;

#[derive(Parser)]
#[command(name = "jamwatch", version, about = "Chirp-jamming simulation and interference detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "JAMWATCH_OUT_DIR", default_value = "jamwatch-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the observable log, truth and manifest.
    Simulate {
        /// Scenario file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run the sample-level chain instead of the observable-level model.
        #[arg(long)]
        iq: bool,
        /// Also write the quantized ADC stream (with --iq).
        #[arg(long, requires = "iq")]
        dump_iq: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Derive detector thresholds from an interference-free window of a log.
    Calibrate {
        /// Observable log (.obs.jsonl or .blk).
        log: PathBuf,
        /// Calibration window as START,END in seconds; taken from the scenario
        /// when omitted.
        #[arg(long, value_parser = parse_window)]
        window: Option<[f64; 2]>,
        /// Scenario file supplying thresholds and the default window.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Run both detectors over a log.
    Detect {
        /// Observable log (.obs.jsonl or .blk).
        log: PathBuf,
        /// Calibration file written by `calibrate`.
        calibration: PathBuf,
        /// Scenario file supplying the debounce setting.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Score a verdict log against ground truth.
    Evaluate {
        /// Verdict log written by `detect`.
        verdicts: PathBuf,
        /// Ground truth written by `simulate`.
        #[arg(long)]
        truth: PathBuf,
        /// Clean epochs within this many seconds of an interval edge are not
        /// scored. Overrides the scenario value.
        #[arg(long)]
        guard_band: Option<f64>,
        /// Scenario file supplying the guard band.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Write tab-separated series for plotting.
    ExportPlot {
        /// Observable log (.obs.jsonl or .blk).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Verdict log written by `detect`.
        #[arg(long)]
        verdicts: Option<PathBuf>,
        /// Directory of previously exported series.
        #[arg(long, conflicts_with_all = ["log", "verdicts"])]
        series: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
}

fn parse_window(s: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| "expected START,END".to_string())?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    let w = [num(a)?, num(b)?];
    if !(w[0].is_finite() && w[1].is_finite() && w[0] < w[1]) {
        return Err(format!("window start must precede end, got {s}"));
    }
    Ok(w)
}

fn scenario(config: Option<&Path>) -> Result<Scenario> {
    Ok(match config {
        Some(p) => load_scenario(p)?,
        None => Scenario::defaults(),
    })
}

fn warn(messages: &[String]) {
    for m in messages {
        eprintln!("warning: {m}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = Execution::default();
    match cli.command {
        Command::Simulate { config, seed, iq, dump_iq, out } => {
            let mut s = scenario(config.as_deref())?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let mode = if iq { SimMode::Iq } else { SimMode::Fast };
            let m = pipeline::simulate(&s, mode, dump_iq, config.as_deref(), &out.out, exec)?;
            println!(
                "simulated {} epochs (seed {}, config {}) into {}",
                s.epoch_count(),
                m.seed,
                m.config_hash,
                out.out.display()
            );
        }
        Command::Calibrate { log, window, config, out } => {
            let s = scenario(config.as_deref())?;
            let window = match (window, &config) {
                (Some(w), _) => w,
                (None, Some(_)) => s.calibration_window(),
                (None, None) => {
                    bail!("a calibration window is required: pass --window or --config")
                }
            };
            let (epochs, warnings) = pipeline::read_observables(&log)?;
            warn(&warnings);
            let cal = pipeline::calibrate(&epochs, window, &CalibrationParams::from_scenario(&s))?;
            warn(&cal.warnings);
            std::fs::create_dir_all(&out.out).with_context(|| format!("creating {}", out.out.display()))?;
            let path = out.out.join(pipeline::CALIBRATION_FILE);
            pipeline::write_calibration(&cal, &path)?;
            println!("wrote {}", path.display());
        }
        Command::Detect { log, calibration, config, out } => {
            let opts =
                DetectorOptions { debounce_epochs: scenario(config.as_deref())?.detect.debounce_epochs };
            let (epochs, warnings) = pipeline::read_observables(&log)?;
            warn(&warnings);
            let cal = pipeline::read_calibration(&calibration)?;
            let (verdicts, warnings) = pipeline::detect(&epochs, &cal, opts, exec);
            warn(&warnings);
            std::fs::create_dir_all(&out.out).with_context(|| format!("creating {}", out.out.display()))?;
            let path = out.out.join(pipeline::VERDICTS_FILE);
            pipeline::write_verdicts(&verdicts, &path)?;
            let count = |f: fn(&jamwatch::DetectorVerdict) -> Option<bool>| {
                verdicts.iter().filter(|v| f(v) == Some(true)).count()
            };
            println!(
                "{} epochs, {} AGC flags, {} CNO flags; wrote {}",
                verdicts.len(),
                count(|v| v.agc_flag),
                count(|v| v.cno_flag),
                path.display()
            );
        }
        Command::Evaluate { verdicts, truth, guard_band, config, out } => {
            let guard_band = match guard_band {
                Some(g) => g,
                None => scenario(config.as_deref())?.metrics.guard_band_s,
            };
            if !(guard_band.is_finite() && guard_band >= 0.0) {
                bail!("--guard-band must be a non-negative number of seconds");
            }
            let verdicts = pipeline::read_verdicts(&verdicts)?;
            let truth = pipeline::read_truth(&truth)?;
            let eval = pipeline::evaluate_verdicts(&verdicts, &truth, guard_band)?;
            eval.write(&out.out)?;
            print!("{}", eval.comparison().render());
        }
        Command::ExportPlot { log, verdicts, series, out } => {
            let plot = if let Some(dir) = series {
                PlotSeries::read(&dir)?
            } else {
                if log.is_none() && verdicts.is_none() {
                    bail!("nothing to export: pass --log, --verdicts or --series");
                }
                let epochs = match &log {
                    Some(p) => {
                        let (e, warnings) = pipeline::read_observables(p)?;
                        warn(&warnings);
                        e
                    }
                    None => Vec::new(),
                };
                let verdicts = match &verdicts {
                    Some(p) => pipeline::read_verdicts(p)?,
                    None => Vec::new(),
                };
                PlotSeries::from_sources(&epochs, &verdicts)
            };
            plot.write(&out.out)?;
            println!(
                "{} AGC points, {} C/N0 points, {} flag rows into {}",
                plot.agc.len(),
                plot.cno.len(),
                plot.flags.len(),
                out.out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their source in the message
            let mut msg = String::new();
            for cause in e.chain().map(ToString::to_string) {
                if !msg.ends_with(&cause) {
                    msg = if msg.is_empty() { cause } else { format!("{msg}: {cause}") };
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
