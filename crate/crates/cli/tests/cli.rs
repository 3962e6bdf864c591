use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hbt_core::correlator::{Correlogram, CorrelogramSpec};
use hbt_core::scenario::{modulated_lamp, ScenarioConfig};
use hbt_core::tags::{read_stream_file, write_stream_file};
use hbt_core::{TagStream, TimeTag};

fn hbt(args: &[&str]) -> Output {
    hbt_env(args, &[])
}

fn hbt_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hbt"));
    cmd.args(args).env_remove("HBT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two channels: 0 at 0, 10, 20 ns and 1 at 5, 15 ns.
fn golden_stream(path: &Path) {
    let tags = [(0, 0), (5_000, 1), (10_000, 0), (15_000, 1), (20_000, 0)]
        .into_iter()
        .map(|(t, c)| TimeTag::new(t, c))
        .collect();
    let s = TagStream::new(1, 30_000, 2, tags).unwrap();
    write_stream_file(&s, path).unwrap();
}

/// Short modulated-lamp run, small enough for a CLI smoke test.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg: ScenarioConfig = modulated_lamp();
    cfg.duration_ps = 2_000_000_000;
    cfg.checks.clear();
    let path = dir.join("small.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&hbt(&[])), 1);
    assert_eq!(code(&hbt(&["bogus"])), 1);
    assert_eq!(code(&hbt(&["correlate", "--a", "x.ptt:0"])), 1);
    assert_eq!(
        code(&hbt(&["scenario", "--name", "no-such", "--out", "/tmp/x"])),
        1
    );
    assert_eq!(code(&hbt(&["--help"])), 0);
    let out = hbt_env(&["scenario", "--list"], &[("HBT_THREADS", "zero")]);
    assert_eq!(code(&out), 1);
}

#[test]
fn list_and_print_config() {
    let out = hbt(&["scenario", "--list"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.contains("fig4-semiclassical"));

    let out = hbt(&["scenario", "--name", "fig3-singlemode", "--print-config"]);
    assert_eq!(code(&out), 0);
    let cfg = ScenarioConfig::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.name, "fig3-singlemode");
}

#[test]
fn correlate_golden_stream() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.ptt");
    golden_stream(&input);
    let csv = dir.path().join("c.csv");
    let a = format!("{}:0", p(&input));
    let b = format!("{}:1", p(&input));
    let out = hbt(&[
        "correlate",
        "--a",
        &a,
        "--b",
        &b,
        "--bin-ps",
        "10000",
        "--tau-min-ps",
        "-20000",
        "--tau-max-ps",
        "20000",
        "--out",
        p(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let c = Correlogram::read_csv_file(&csv).unwrap();
    assert_eq!(c.counts, vec![1, 2, 2, 1]);
    assert_eq!(
        c.spec,
        CorrelogramSpec::new(10_000, -20_000, 20_000).unwrap()
    );
}

#[test]
fn correlate_data_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.ptt");
    golden_stream(&input);
    let out_csv = dir.path().join("c.csv");
    let run = |a: &str, bin: &str| {
        code(&hbt(&[
            "correlate",
            "--a",
            a,
            "--b",
            &format!("{}:1", p(&input)),
            "--bin-ps",
            bin,
            "--tau-min-ps",
            "-20000",
            "--tau-max-ps",
            "20000",
            "--out",
            p(&out_csv),
        ]))
    };
    assert_eq!(
        run(
            &format!("{}:0", p(&dir.path().join("missing.ptt"))),
            "10000"
        ),
        2
    );
    let garbage = dir.path().join("garbage.ptt");
    fs::write(&garbage, b"not a tag file at all, definitely not").unwrap();
    assert_eq!(run(&format!("{}:0", p(&garbage)), "10000"), 2);
    assert_eq!(run(&format!("{}:9", p(&input)), "10000"), 1);
    assert_eq!(run(p(&input), "10000"), 1);
    assert_eq!(run(&format!("{}:0", p(&input)), "3000"), 1);
}

fn write_model_csv(path: &Path, sigma2: f64) {
    let spec = CorrelogramSpec::symmetric(1_000, 400_000).unwrap();
    let mut text = String::from("tau_ps,counts,g2,g2_err\n");
    for k in 0..spec.n_bins() {
        let tau = spec.bin_center(k);
        let g2 = (sigma2 * (-tau.abs() / 190e3).exp() * (std::f64::consts::TAU * tau / 40e3).cos())
            .exp();
        let counts = (g2 * 1e4).round();
        text += &format!("{tau},{counts},{g2},{}\n", g2 / counts.sqrt());
    }
    fs::write(path, text).unwrap();
}

#[test]
fn fit_reports_and_signals_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g2.csv");
    let report = dir.path().join("fit.json");
    write_model_csv(&csv, 1.5);
    let out = hbt(&["fit", "--in", p(&csv), "--out", p(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!((v["fit"]["t_osc_ps"].as_f64().unwrap() / 40e3 - 1.0).abs() < 1e-6);
    assert!((v["fit"]["tau_d_ps"].as_f64().unwrap() / 190e3 - 1.0).abs() < 1e-6);
    assert!(v["peak"]["g2_zero"].as_f64().unwrap() > 4.0);

    // A flat curve has no oscillation to fit.
    write_model_csv(&csv, 0.0);
    fs::remove_file(&report).unwrap();
    let out = hbt(&["fit", "--in", p(&csv), "--out", p(&report)]);
    assert_eq!(code(&out), 3);
    assert!(report.exists());

    fs::write(&csv, "tau_ps,counts\n1,2\n").unwrap();
    assert_eq!(
        code(&hbt(&["fit", "--in", p(&csv), "--out", p(&report)])),
        2
    );
}

#[test]
fn witness_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cross.csv");
    let w = dir.path().join("w.csv");
    write_model_csv(&csv, 0.5);
    let out = hbt(&[
        "witness",
        "--gii0",
        "2",
        "--gvv0",
        "2",
        "--in",
        p(&csv),
        "--out",
        p(&w),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&w).unwrap();
    assert_eq!(text.lines().next(), Some("tau_ps,w,w_err"));
    assert_eq!(text.lines().count(), 801);
    let bad = hbt(&[
        "witness",
        "--gii0",
        "0",
        "--gvv0",
        "2",
        "--in",
        p(&csv),
        "--out",
        p(&w),
    ]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn scenario_is_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let mut csvs = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = hbt_env(
            &["scenario", "--config", p(&config), "--out", p(&out_dir)],
            &[("HBT_THREADS", threads)],
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap())
                .unwrap();
        assert!(report["analyses"]["envelope"]["max_abs_z"].is_number());
        csvs.push(fs::read(out_dir.join("d1_d2.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn scenario_bad_config_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, "{ \"name\": 3 }").unwrap();
    let out = hbt(&["scenario", "--config", p(&config), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_writes_four_detector_streams() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_dir = dir.path().join("sim");
    let out = hbt(&[
        "simulate",
        "--config",
        p(&config),
        "--seed",
        "99",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let s = read_stream_file(out_dir.join("detectors.ptt")).unwrap();
    assert_eq!(s.channel_count(), 4);
    assert!((0..4).all(|ch| s.count(ch) > 0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 99);
    assert_eq!(report["checks"].as_array().unwrap().len(), 0);
}
