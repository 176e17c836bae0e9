//! Batch experiments: run, sweep and report.

use std::path::{Path, PathBuf};

use prosocial_core::metrics::{aggregate, MetricsReport};
use prosocial_core::simulation::{
    default_peripherals, first_heading_deviation, generate_headon, headon_heading, run_batch, EpisodeLabel, EpisodeLog, EpisodeTiming,
    HumanVariant, Parallelism, Role, Scenario,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const TIMING: &str = "timing.json";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const REPORT_SOURCES: &str = "report_sources.json";

/// Head-on templates by name; anything else is read as a scenario file.
pub const TEMPLATES: [&str; 2] = ["headon", "headon_peripherals"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Template name or path to a scenario JSON file.
    pub scenario: String,
    pub policies: Vec<String>,
    /// Human model for seed `s` is `human_models[s % len]`.
    pub human_models: Vec<HumanVariant>,
    pub episodes: usize,
    pub seed_base: u64,
    pub out_dir: PathBuf,
    pub overrides: Vec<String>,
    /// Worker threads; `None` uses every core, `Some(1)` runs serially.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: "headon".into(),
            policies: vec!["ours".into()],
            human_models: vec![HumanVariant::Ibr, HumanVariant::Oc],
            episodes: 40,
            seed_base: 0,
            out_dir: PathBuf::from("runs/latest"),
            overrides: Vec::new(),
            threads: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<ExperimentConfig, CliError> {
        if self.episodes == 0 {
            return Err(CliError::Usage("--episodes must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(CliError::Usage("no policies given".into()));
        }
        if self.human_models.is_empty() {
            return Err(CliError::Usage("no human models given".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        let cfg = ExperimentConfig::default().with_overrides(&self.overrides)?;
        for p in &self.policies {
            cfg.policy(p)?;
        }
        if !TEMPLATES.contains(&self.scenario.as_str()) && !Path::new(&self.scenario).is_file() {
            return Err(CliError::Usage(format!("scenario {:?} is neither a template {TEMPLATES:?} nor a file", self.scenario)));
        }
        Ok(cfg)
    }

    fn parallelism(&self) -> Parallelism {
        match self.threads {
            None => Parallelism::Auto,
            Some(1) => Parallelism::Serial,
            Some(k) => Parallelism::Threads(k),
        }
    }
}

/// Builds the scenario for one (policy, seed).
pub fn scenario_for(spec: &ExperimentSpec, cfg: &ExperimentConfig, policy: &str, seed: u64) -> Result<Scenario, CliError> {
    let robot = cfg.policy(policy)?;
    let runtime = |e: prosocial_core::Error| CliError::Runtime(e.to_string());
    if TEMPLATES.contains(&spec.scenario.as_str()) {
        let variant = spec.human_models[(seed % spec.human_models.len() as u64) as usize];
        let mut sc = generate_headon(seed, headon_heading(seed), cfg.human(variant), &robot).map_err(runtime)?;
        sc.duration = cfg.episode.duration;
        if spec.scenario == "headon_peripherals" || cfg.episode.peripherals {
            sc.peripherals = default_peripherals();
        }
        sc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        return Ok(sc);
    }
    let text = std::fs::read_to_string(&spec.scenario).map_err(|e| CliError::Usage(format!("{}: {e}", spec.scenario)))?;
    let mut sc = Scenario::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", spec.scenario)))?;
    let slot = sc
        .agents
        .iter_mut()
        .find(|a| a.role == Role::Robot)
        .ok_or_else(|| CliError::Usage(format!("{}: no robot agent", spec.scenario)))?;
    slot.policy = robot;
    sc.seed = seed;
    sc.label = EpisodeLabel::default();
    sc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(sc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub policy: String,
    pub seed: u64,
    pub human_model: String,
    /// Log path relative to the output directory.
    pub log: Option<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub spec: ExperimentSpec,
    pub config: ExperimentConfig,
    pub episodes: Vec<EpisodeEntry>,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub report: MetricsReport,
    pub logs: Vec<EpisodeLog>,
}

impl RunOutcome {
    pub fn failures(&self) -> usize {
        self.manifest.failures
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

pub fn log_path(policy: &str, seed: u64) -> PathBuf {
    PathBuf::from("logs").join(policy).join(format!("seed_{seed:04}.json"))
}

/// Aggregates logs in a canonical order so any permutation of the same
/// logs gives the same report.
pub fn canonical_report(logs: &mut [EpisodeLog]) -> Result<MetricsReport, CliError> {
    logs.sort_by(|a, b| (&a.label.policy, &a.label.human_model, a.seed).cmp(&(&b.label.policy, &b.label.human_model, b.seed)));
    aggregate(logs).map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<(), CliError> {
    let runtime = |e: prosocial_core::Error| CliError::Runtime(e.to_string());
    write(&dir.join(REPORT_JSON), &report.to_json().map_err(runtime)?)?;
    write(&dir.join(REPORT_CSV), &report.to_csv().map_err(runtime)?)
}

/// Runs every (policy, seed) episode and writes logs, report and manifest.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<RunOutcome, CliError> {
    let cfg = spec.validate()?;
    for policy in &spec.policies {
        // surface template problems as usage errors before any work starts
        scenario_for(spec, &cfg, policy, spec.seed_base)?;
    }
    let mut entries = Vec::new();
    let mut logs = Vec::new();
    let mut timings: Vec<EpisodeTiming> = Vec::new();
    for policy in &spec.policies {
        let gen = |seed: u64| scenario_for(spec, &cfg, policy, seed).map_err(|e| prosocial_core::Error::InvalidConfig(e.to_string()));
        let batch = run_batch(gen, spec.episodes, spec.seed_base, spec.parallelism()).map_err(|e| CliError::Runtime(e.to_string()))?;
        for log in &batch.logs {
            let rel = log_path(policy, log.seed);
            write(&spec.out_dir.join(&rel), &log.to_json())?;
            write(&spec.out_dir.join(rel.with_extension("csv")), &log.to_csv().map_err(|e| CliError::Runtime(e.to_string()))?)?;
            entries.push(EpisodeEntry {
                policy: policy.clone(),
                seed: log.seed,
                human_model: log.label.human_model.clone(),
                log: Some(rel),
                error: None,
            });
        }
        for (seed, error) in &batch.failures {
            log::error!("{policy} seed {seed}: {error}");
            entries.push(EpisodeEntry {
                policy: policy.clone(),
                seed: *seed,
                human_model: String::new(),
                log: None,
                error: Some(error.clone()),
            });
        }
        logs.extend(batch.logs);
        timings.extend(batch.timings);
    }
    entries.sort_by(|a, b| {
        (spec.policies.iter().position(|p| *p == a.policy), a.seed).cmp(&(spec.policies.iter().position(|p| *p == b.policy), b.seed))
    });
    let failures = entries.iter().filter(|e| e.error.is_some()).count();
    let report = if logs.is_empty() { MetricsReport::default() } else { canonical_report(&mut logs)? };
    write_report(&spec.out_dir, &report)?;
    write(&spec.out_dir.join(TIMING), &to_json(&timings))?;
    let manifest = Manifest {
        tool: "prosocial".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "run".into(),
        spec: spec.clone(),
        config: cfg,
        episodes: entries,
        failures,
    };
    write(&spec.out_dir.join(MANIFEST), &to_json(&manifest))?;
    if failures == spec.episodes * spec.policies.len() {
        return Err(CliError::Runtime("every episode failed; see the manifest".into()));
    }
    Ok(RunOutcome { manifest, report, logs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: String,
    pub value: String,
    pub policy: String,
    /// First tick at which the robot heading has turned by more than 0.1 rad, per episode.
    pub first_deviation: Vec<Option<usize>>,
    /// Median over episodes that turned at all [s].
    pub median_first_deviation_s: Option<f64>,
    pub max_robot_inconvenience: f64,
    pub robot_budget: Option<f64>,
    pub failures: usize,
}

pub const DEVIATION_THRESHOLD: f64 = 0.1;

/// One sub-experiment per value, in `<out>/<key>=<value>/`, plus a
/// cross-value summary.
pub fn cmd_sweep(key: &str, values: &[String], spec: &ExperimentSpec) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let base = spec.validate()?;
    let key = base.resolve_key(key)?;
    let mut rows = Vec::new();
    for value in values {
        let mut sub = spec.clone();
        sub.overrides.push(format!("{key}={value}"));
        sub.out_dir = spec.out_dir.join(format!("{key}={value}"));
        let run = cmd_run(&sub)?;
        for policy in &spec.policies {
            let logs: Vec<&EpisodeLog> = run.logs.iter().filter(|l| l.label.policy == *policy).collect();
            let first_deviation: Vec<Option<usize>> = logs
                .iter()
                .map(|l| l.role(Role::Robot).and_then(|r| first_heading_deviation(&r.trajectory, DEVIATION_THRESHOLD)))
                .collect();
            let mut turned: Vec<f64> = first_deviation.iter().flatten().map(|&k| k as f64 * run.manifest.config.planner.dt).collect();
            turned.sort_by(f64::total_cmp);
            let median = (!turned.is_empty()).then(|| prosocial_core::metrics::quantile_sorted(&turned, 0.5));
            let robot = logs.first().and_then(|l| l.scenario.agents.iter().position(|a| a.role == Role::Robot));
            let max_incon =
                logs.iter().flat_map(|l| l.steps.iter().map(move |s| robot.map_or(0.0, |r| s.agents[r].inconvenience))).fold(0.0, f64::max);
            let robot_budget = run.manifest.config.policy(policy)?.planner_mut().and_then(|p| p.budget);
            rows.push(SweepRow {
                key: key.clone(),
                value: value.clone(),
                policy: policy.clone(),
                first_deviation,
                median_first_deviation_s: median,
                max_robot_inconvenience: max_incon,
                robot_budget,
                failures: run.manifest.episodes.iter().filter(|e| e.policy == *policy && e.error.is_some()).count(),
            });
        }
    }
    write(&spec.out_dir.join(SWEEP_JSON), &to_json(&rows))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(["key", "value", "policy", "median_first_deviation_s", "max_robot_inconvenience", "robot_budget", "failures"])
        .map_err(csv_err)?;
    for r in &rows {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        w.write_record([
            r.key.clone(),
            r.value.clone(),
            r.policy.clone(),
            opt(r.median_first_deviation_s),
            r.max_robot_inconvenience.to_string(),
            opt(r.robot_budget),
            r.failures.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&spec.out_dir.join(SWEEP_CSV), &String::from_utf8(bytes).expect("csv is utf-8"))?;
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSources {
    pub logs: Vec<PathBuf>,
    /// Files that looked like logs but could not be read, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

const NOT_LOGS: [&str; 6] = [MANIFEST, REPORT_JSON, TIMING, SWEEP_JSON, REPORT_SOURCES, "recording.json"];

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "json") && !NOT_LOGS.iter().any(|n| path.file_name().is_some_and(|f| f == *n)) {
            out.push(path);
        }
    }
    Ok(())
}

/// Rebuilds the report from the episode logs under `logs_dir` alone.
pub fn cmd_report(logs_dir: &Path, out_dir: &Path) -> Result<(MetricsReport, ReportSources), CliError> {
    if !logs_dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", logs_dir.display())));
    }
    let mut files = Vec::new();
    collect_json(logs_dir, &mut files).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut sources = ReportSources::default();
    let mut logs = Vec::new();
    for f in files {
        match std::fs::read_to_string(&f).map_err(|e| e.to_string()).and_then(|s| EpisodeLog::from_json(&s).map_err(|e| e.to_string())) {
            Ok(log) => {
                logs.push(log);
                sources.logs.push(f);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                sources.skipped.push((f, e));
            }
        }
    }
    if logs.is_empty() {
        return Err(CliError::Runtime(format!("no readable episode logs under {}", logs_dir.display())));
    }
    let report = canonical_report(&mut logs)?;
    write_report(out_dir, &report)?;
    write(&out_dir.join(REPORT_SOURCES), &to_json(&sources))?;
    Ok((report, sources))
}
