use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SHORT: &str = "seed = 5\nduration_s = 200.0\n\n[schedule]\nn_intervals = 3\ninterval_len_s = 10.0\ngap_len_s = 40.0\njnr_start_db = 6.0\n";

/// Runs the binary in `dir` with whitespace-separated arguments.
fn jamwatch(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jamwatch"))
        .current_dir(dir)
        .env_remove("JAMWATCH_OUT_DIR")
        .args(args.split_whitespace())
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &str) -> String {
    let out = jamwatch(dir, args);
    assert!(out.status.success(), "{args} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn same_bytes(a: &Path, b: &Path) {
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{} vs {}", a.display(), b.display());
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("short.toml"), SHORT).unwrap();
    dir
}

#[test]
fn outputs_feed_the_next_command() {
    let dir = setup();
    let d = dir.path();
    ok(d, "simulate --config short.toml --out run");
    for f in ["observables.obs.jsonl", "observables.blk", "truth.toml", "manifest.json"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }
    // both log formats calibrate to the same thresholds
    ok(d, "calibrate run/observables.blk --config short.toml --out blk");
    ok(d, "calibrate run/observables.obs.jsonl --config short.toml --out run");
    same_bytes(&d.join("blk/calibration.json"), &d.join("run/calibration.json"));

    ok(d, "detect run/observables.obs.jsonl run/calibration.json --out run");
    let table = ok(d, "evaluate run/verdicts.jsonl --truth run/truth.toml --out run");
    assert!(table.lines().next().unwrap().contains("AGC-based"));
    assert!(table.contains("Interference detected intervals        3/3"), "{table}");
    for f in ["report.txt", "report.json", "comparison.txt"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }

    ok(d, "export-plot --log run/observables.obs.jsonl --verdicts run/verdicts.jsonl --out plot");
    let times = |name: &str| -> Vec<String> {
        fs::read_to_string(d.join("plot").join(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split('\t').next().unwrap().to_string())
            .collect()
    };
    assert_eq!(times("agc.tsv").len(), 200);
    assert_eq!(times("agc.tsv"), times("flags.tsv"));
}

#[test]
fn fixed_seed_reproduces_every_output() {
    let dir = setup();
    let d = dir.path();
    for run in ["a", "b"] {
        ok(d, &format!("simulate --config short.toml --seed 42 --out {run}"));
        ok(d, &format!("calibrate {run}/observables.obs.jsonl --config short.toml --out {run}"));
        ok(d, &format!("detect {run}/observables.obs.jsonl {run}/calibration.json --out {run}"));
        ok(d, &format!("evaluate {run}/verdicts.jsonl --truth {run}/truth.toml --out {run}"));
    }
    for f in [
        "observables.obs.jsonl",
        "observables.blk",
        "truth.toml",
        "calibration.json",
        "verdicts.jsonl",
        "report.txt",
        "report.json",
        "comparison.txt",
    ] {
        same_bytes(&d.join("a").join(f), &d.join("b").join(f));
    }
    ok(d, "simulate --config short.toml --seed 43 --out c");
    assert_ne!(
        fs::read(d.join("a/observables.obs.jsonl")).unwrap(),
        fs::read(d.join("c/observables.obs.jsonl")).unwrap()
    );
}

#[test]
fn nominal_log_raises_no_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("quiet.toml"), "duration_s = 120.0\n[schedule]\nintervals = []\n").unwrap();
    ok(d, "simulate --config quiet.toml --out run");
    ok(d, "calibrate run/observables.obs.jsonl --window 0,60 --out run");
    let summary = ok(d, "detect run/observables.obs.jsonl run/calibration.json --out run");
    assert!(summary.starts_with("120 epochs, 0 AGC flags, 0 CNO flags"), "{summary}");
}

#[test]
fn empty_log_exports_empty_series() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("empty.obs.jsonl"), "").unwrap();
    ok(d, "export-plot --log empty.obs.jsonl --out plot");
    let read = |name: &str| fs::read_to_string(d.join("plot").join(name)).unwrap();
    assert_eq!(read("agc.tsv"), "t\tagc_db\n");
    assert_eq!(read("cno.tsv"), "t\tsat\tcno_dbhz\n");
    assert_eq!(read("flags.tsv"), "t\tagc_flag\tcno_flag\n");
}

#[test]
fn reexported_series_are_byte_identical() {
    let dir = setup();
    let d = dir.path();
    ok(d, "simulate --config short.toml --out run");
    ok(d, "calibrate run/observables.blk --window 0,40 --out run");
    ok(d, "detect run/observables.blk run/calibration.json --out run");
    ok(d, "export-plot --log run/observables.blk --verdicts run/verdicts.jsonl --out p1");
    ok(d, "export-plot --series p1 --out p2");
    for f in ["agc.tsv", "cno.tsv", "flags.tsv"] {
        same_bytes(&d.join("p1").join(f), &d.join("p2").join(f));
    }
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = setup();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_jamwatch"))
        .current_dir(d)
        .env("JAMWATCH_OUT_DIR", "from-env")
        .args(["simulate", "--config", "short.toml"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("from-env/observables.obs.jsonl").is_file());
}

#[test]
fn iq_mode_writes_adc_dump() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("iq.toml"),
        "duration_s = 4.0\n[schedule]\nintervals = [{ start_s = 1.0, end_s = 3.0, jnr_db = 10.0 }]\n",
    )
    .unwrap();
    ok(d, "simulate --config iq.toml --iq --dump-iq --out run");
    let manifest = fs::read_to_string(d.join("run/manifest.json")).unwrap();
    assert!(manifest.contains("\"mode\": \"iq\""));
    assert!(manifest.contains("adc.iq32"));
    // 4 s of 2 MHz complex f32 samples behind a header
    let len = fs::metadata(d.join("run/adc.iq32")).unwrap().len();
    assert!(len >= 4 * 2_000_000 * 8, "{len}");
}

#[test]
fn warnings_keep_exit_status_zero() {
    let dir = setup();
    let d = dir.path();
    ok(d, "simulate --config short.toml --out run");
    // this window spans a jammed interval
    let out = jamwatch(d, "calibrate run/observables.obs.jsonl --window 40,100 --out run");
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning:") && stderr.contains("interference"), "{stderr}");
}

#[test]
fn hard_errors_exit_non_zero() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[schedule]\njnr_step_db = \"five\"\n").unwrap();
    ok(d, "simulate --config short.toml --out run");
    for args in [
        "simulate --config bad.toml",
        "simulate --config missing.toml",
        "calibrate missing.obs.jsonl --window 0,10",
        "calibrate run/observables.obs.jsonl",
        "calibrate run/observables.obs.jsonl --window 500,600",
        "detect run/observables.obs.jsonl short.toml",
        "export-plot --out x",
    ] {
        let out = jamwatch(d, args);
        assert_eq!(out.status.code(), Some(1), "{args}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "), "{args}");
    }
    let bad = jamwatch(d, "simulate --config bad.toml");
    assert!(String::from_utf8_lossy(&bad.stderr).contains("schedule.jnr_step_db"));

    // usage errors come from the argument parser
    assert_eq!(jamwatch(d, "simulate --bogus").status.code(), Some(2));
    assert_eq!(jamwatch(d, "calibrate x --window 5,1").status.code(), Some(2));
}

#[test]
fn guard_band_clears_recovery_false_alarms() {
    let dir = setup();
    let d = dir.path();
    ok(d, "simulate --config short.toml --out run");
    ok(d, "calibrate run/observables.obs.jsonl --config short.toml --out run");
    ok(d, "detect run/observables.obs.jsonl run/calibration.json --out run");
    let cno_fp = |out: &str| -> usize {
        let report = fs::read_to_string(d.join(out).join("report.txt")).unwrap();
        let line = report.lines().find(|l| l.starts_with("cno.fp = ")).unwrap();
        line["cno.fp = ".len()..].parse().unwrap()
    };
    ok(d, "evaluate run/verdicts.jsonl --truth run/truth.toml --out g0");
    fs::write(d.join("guard.toml"), "[metrics]\nguard_band_s = 5.0\n").unwrap();
    ok(d, "evaluate run/verdicts.jsonl --truth run/truth.toml --config guard.toml --out g5");
    assert!(cno_fp("g0") > 0);
    assert_eq!(cno_fp("g5"), 0);
}
