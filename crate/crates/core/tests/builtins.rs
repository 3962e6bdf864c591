use std::fs;

use hbt_core::scenario::{
    builtin_scenarios, modulated_lamp, pulsetrain_35, run_scenario_with, FailureReport, RunOptions,
    ScenarioConfig, ScenarioReport, Stage,
};
use hbt_core::sources::SourceModel;

fn run_in_tempdir(cfg: &ScenarioConfig) -> (tempfile::TempDir, ScenarioReport) {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let run = run_scenario_with(cfg, &opts).unwrap();
    (dir, run.report)
}

/// Every requested analysis and correlogram is accounted for on disk and in
/// the report, and the report parses back.
fn assert_complete(cfg: &ScenarioConfig, dir: &std::path::Path, report: &ScenarioReport) {
    let text = fs::read_to_string(dir.join("report.json")).unwrap();
    let back: ScenarioReport = serde_json::from_str(&text).unwrap();
    assert_eq!(&back.config, cfg);
    for a in &cfg.analyses {
        let block = &report.analyses[&a.name];
        assert_eq!(block["op"], a.op.name(), "{}", a.name);
    }
    for c in &cfg.correlograms {
        let file = &report.artifacts.correlograms[&c.name];
        assert!(dir.join(file).is_file(), "{file}");
        assert!(report.correlograms.contains_key(&c.name));
    }
    assert_eq!(report.checks.len(), cfg.checks.len());
    assert!(report.timing.total_s > 0.0);
}

#[test]
fn pulsetrain_passes_its_checks() {
    let cfg = pulsetrain_35();
    let (dir, report) = run_in_tempdir(&cfg);
    assert_complete(&cfg, dir.path(), &report);
    assert!(report.all_checks_passed, "{:?}", report.failed_checks());
    assert!(dir.path().join("witness.csv").is_file());
}

#[test]
fn modulated_lamp_passes_its_checks() {
    let cfg = modulated_lamp();
    let (dir, report) = run_in_tempdir(&cfg);
    assert_complete(&cfg, dir.path(), &report);
    assert!(report.all_checks_passed, "{:?}", report.failed_checks());
}

#[test]
fn analysis_errors_are_reported_in_place() {
    let mut cfg = modulated_lamp();
    cfg.duration_ps /= 10;
    // A fit of the flat envelope has no oscillation to find.
    cfg.analyses.push(
        serde_json::from_value(serde_json::json!({
            "name": "oscillation", "op": "fit", "correlogram": "d1_d2"
        }))
        .unwrap(),
    );
    cfg.checks.clear();
    let (_dir, report) = run_in_tempdir(&cfg);
    let block = &report.analyses["oscillation"];
    assert_eq!(block["op"], "fit");
    assert!(!report.converged);
    assert!(block.get("error").is_some() || block["converged"] == false);
}

#[test]
fn stage_failure_leaves_only_a_failure_report() {
    let mut cfg = modulated_lamp();
    // Far beyond the per-sample count budget.
    cfg.source = SourceModel::Coherent { rate: 1e20 };
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "unrelated").unwrap();
    let opts = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let e = run_scenario_with(&cfg, &opts).err().expect("run fails");
    assert_eq!(e.stage, Stage::Source);
    let failure: FailureReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(failure.stage, "source");
    assert_eq!(failure.config, cfg);
    let mut names: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["keep.txt", "report.json"]);
}

#[test]
fn invalid_config_fails_at_validation() {
    let mut cfg = pulsetrain_35();
    cfg.correlograms[0].name = cfg.correlograms[1].name.clone();
    let e = run_scenario_with(&cfg, &RunOptions::default())
        .err()
        .expect("duplicate names");
    assert_eq!(e.stage, Stage::Validate);
}

#[test]
fn builtins_have_documented_seeds_and_distinct_names() {
    let all = builtin_scenarios();
    let mut names: Vec<_> = all.iter().map(|c| c.name.as_str()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 7);
    let mut seeds: Vec<_> = all.iter().map(|c| c.seed).collect();
    seeds.sort();
    seeds.dedup();
    assert_eq!(seeds.len(), 7);
}
