use std::path::Path;
use std::process::Command;

use prosocial_cli::experiment::{log_path, MANIFEST, REPORT_JSON, SWEEP_CSV, SWEEP_JSON, TIMING};
use prosocial_cli::{cmd_report, cmd_run, cmd_sweep, CliError, ExperimentSpec, Manifest};
use prosocial_core::metrics::MetricsReport;
use prosocial_core::simulation::{EpisodeLog, Scenario};

/// Short, cheap episodes: reactive baselines and one-second horizons.
fn quick(out: &Path, policies: &[&str]) -> ExperimentSpec {
    ExperimentSpec {
        policies: policies.iter().map(|p| p.to_string()).collect(),
        episodes: 3,
        out_dir: out.to_path_buf(),
        overrides: vec!["episode.duration=1.0".into()],
        threads: Some(1),
        ..ExperimentSpec::default()
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prosocial"))
}

#[test]
fn run_writes_logs_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = quick(dir.path(), &["sfm", "reactive_cv"]);
    let out = cmd_run(&spec).unwrap();
    assert_eq!(out.logs.len(), 6);
    assert_eq!(out.failures(), 0);
    for policy in ["sfm", "reactive_cv"] {
        for seed in 0..3 {
            let p = dir.path().join(log_path(policy, seed));
            let log = EpisodeLog::from_json(&std::fs::read_to_string(&p).unwrap()).unwrap();
            assert_eq!(log.steps.len(), 10);
            assert_eq!(log.label.policy, policy);
            assert_eq!(log.label.human_model, if seed % 2 == 0 { "ibr" } else { "oc" });
            assert!(p.with_extension("csv").is_file());
        }
    }
    assert!(dir.path().join(TIMING).is_file());

    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest.spec.overrides, vec!["episode.duration=1.0".to_string()]);
    assert_eq!(manifest.config.episode.duration, 1.0);
    assert_eq!(manifest.config.planner.markup, 1.05);
    assert_eq!(manifest.config.planner.budget, Some(0.2));
    assert_eq!(manifest.episodes.len(), 6);
    assert!(manifest.episodes.iter().all(|e| e.error.is_none()));

    let report = MetricsReport::from_json(&std::fs::read_to_string(dir.path().join(REPORT_JSON)).unwrap()).unwrap();
    // 3 pairwise + 3 per agent, per episode
    assert_eq!(report.rows.len(), 6 * 7);
    assert_eq!(report, out.report);
}

#[test]
fn report_regenerates_the_run_report_and_skips_corrupt_logs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = quick(&dir.path().join("run"), &["sfm"]);
    cmd_run(&spec).unwrap();
    let original = std::fs::read_to_string(spec.out_dir.join(REPORT_JSON)).unwrap();

    let rebuilt = dir.path().join("rebuilt");
    let (_, sources) = cmd_report(&spec.out_dir, &rebuilt).unwrap();
    assert_eq!(sources.logs.len(), 3);
    assert!(sources.skipped.is_empty());
    assert_eq!(std::fs::read_to_string(rebuilt.join(REPORT_JSON)).unwrap(), original);

    std::fs::write(spec.out_dir.join("logs/sfm/seed_0099.json"), "{ truncated").unwrap();
    let (_, sources) = cmd_report(&spec.out_dir, &rebuilt).unwrap();
    assert_eq!(sources.skipped.len(), 1);
    assert_eq!(std::fs::read_to_string(rebuilt.join(REPORT_JSON)).unwrap(), original);

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_report(empty.path(), &rebuilt), Err(CliError::Runtime(_))));
    assert!(matches!(cmd_report(&empty.path().join("missing"), &rebuilt), Err(CliError::Usage(_))));
}

#[test]
fn sweep_runs_one_subexperiment_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = quick(dir.path(), &["sfm"]);
    spec.episodes = 1;
    let rows = cmd_sweep("sfm.relaxation", &["0.3".into(), "0.6".into()], &spec).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].value, "0.3");
    assert!(dir.path().join("sfm.relaxation=0.3").join(MANIFEST).is_file());
    assert!(dir.path().join(SWEEP_JSON).is_file());
    let csv = std::fs::read_to_string(dir.path().join(SWEEP_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(matches!(cmd_sweep("planner.nope", &["1".into()], &spec), Err(CliError::Usage(_))));
    assert!(matches!(cmd_sweep("markup", &[], &spec), Err(CliError::Usage(_))));
}

#[test]
fn bad_specs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = quick(dir.path(), &["nope"]);
    assert!(matches!(cmd_run(&spec), Err(CliError::Usage(_))));
    spec.policies = vec!["sfm".into()];
    spec.episodes = 0;
    assert!(matches!(cmd_run(&spec), Err(CliError::Usage(_))));
    spec.episodes = 1;
    spec.scenario = dir.path().join("missing.json").display().to_string();
    assert!(matches!(cmd_run(&spec), Err(CliError::Usage(_))));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = |args: &[&str]| bin().args(args).output().unwrap().status.code().unwrap();

    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["run", "--policies", "nope"]), 1);
    assert_eq!(code(&["run", "--override", "planner.markup=fast"]), 1);
    let run = [
        "run",
        "--policies",
        "sfm",
        "--episodes",
        "2",
        "--threads",
        "1",
        "--override",
        "episode.duration=1",
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(code(&run), 0);
    assert_eq!(code(&["report", "--logs", out.to_str().unwrap()]), 0);

    std::fs::write(out.join("logs/sfm/seed_0042.json"), "[]").unwrap();
    assert_eq!(code(&["report", "--logs", out.to_str().unwrap()]), 3);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&["report", "--logs", empty.to_str().unwrap()]), 2);

    // hitl needs an external human; a plain scenario is refused before binding
    let sc_path = dir.path().join("scenario.json");
    assert_eq!(code(&["scenario", "--seed", "1", "--out", sc_path.to_str().unwrap()]), 0);
    assert_eq!(code(&["hitl", "--scenario", sc_path.to_str().unwrap(), "--bind", "127.0.0.1:0"]), 1);

    let ext_path = dir.path().join("external.json");
    assert_eq!(code(&["scenario", "--external-human", "--out", ext_path.to_str().unwrap()]), 0);
    let sc = Scenario::from_json(&std::fs::read_to_string(&ext_path).unwrap()).unwrap();
    assert_eq!(sc.agents[1].policy.name(), "external");
}
