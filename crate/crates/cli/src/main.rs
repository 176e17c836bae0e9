#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use prosocial_cli::experiment::scenario_for;
use prosocial_cli::{cmd_report, cmd_run, cmd_sweep, CliError, ExperimentSpec, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE};
use prosocial_core::simulation::{HumanVariant, PolicySpec, Role, Scenario};

/// Social-navigation planning workbench.
///
/// Exit codes: 0 ok, 1 usage error, 2 runtime failure, 3 partial failure
/// (some episodes failed or some logs were unreadable).
#[derive(Parser)]
#[command(name = "prosocial", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of episodes and write logs, a metrics report and a manifest.
    Run(RunArgs),
    /// Repeat `run` once per value of one config key.
    Sweep {
        /// Dotted config key; bare names refer to the robot planner (e.g. `markup`).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rebuild the metrics report from a directory of episode logs.
    Report {
        #[arg(long)]
        logs: PathBuf,
        /// Defaults to the log directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a human-in-the-loop session over a websocket.
    Hitl {
        /// Scenario file with exactly one agent whose policy is "external".
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: SocketAddr,
        /// Where the session log and recording are written.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Planner budget per tick [ms].
        #[arg(long, default_value_t = 100.0)]
        budget_ms: f64,
    },
    /// Print a head-on scenario file.
    Scenario {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "ours")]
        policy: String,
        #[arg(long, default_value = "ibr", value_parser = parse_variant)]
        human_model: HumanVariant,
        /// Make the human keyboard-driven (for `hitl`).
        #[arg(long)]
        external_human: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Template (`headon`, `headon_peripherals`) or scenario file.
    #[arg(long, default_value = "headon")]
    scenario: String,
    /// Comma-separated: ours, vibr, oc, sfm, reactive_cv.
    #[arg(long, value_delimiter = ',', default_value = "ours")]
    policies: Vec<String>,
    /// Human model per seed, cycled: ibr, oc.
    #[arg(long, value_delimiter = ',', default_value = "ibr,oc", value_parser = parse_variant)]
    human_models: Vec<HumanVariant>,
    #[arg(long, default_value_t = 40)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// `dotted.key=value`, repeatable (e.g. `planner.markup=1.1`).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores; 1 runs serially).
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            scenario: self.scenario.clone(),
            policies: self.policies.clone(),
            human_models: self.human_models.clone(),
            episodes: self.episodes,
            seed_base: self.seed_base,
            out_dir: self.out.clone(),
            overrides: self.overrides.clone(),
            threads: self.threads,
        }
    }
}

fn parse_variant(s: &str) -> Result<HumanVariant, String> {
    match s {
        "ibr" => Ok(HumanVariant::Ibr),
        "oc" => Ok(HumanVariant::Oc),
        other => Err(format!("unknown human model {other:?} (ibr, oc)")),
    }
}

fn partial(failures: usize) -> i32 {
    if failures > 0 {
        eprintln!("{failures} episode(s) failed; see the manifest");
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Run(args) => {
            let out = cmd_run(&args.spec())?;
            println!("{} episode logs and report written to {}", out.logs.len(), args.out.display());
            Ok(partial(out.failures()))
        }
        Command::Sweep { param, values, run } => {
            let rows = cmd_sweep(&param, &values, &run.spec())?;
            for r in &rows {
                let first = r.median_first_deviation_s.map_or("-".into(), |t| format!("{t:.1} s"));
                println!(
                    "{}={} {}: median first turn {first}, max robot inconvenience {:.4}",
                    r.key, r.value, r.policy, r.max_robot_inconvenience
                );
            }
            Ok(partial(rows.iter().map(|r| r.failures).sum()))
        }
        Command::Report { logs, out } => {
            let out = out.unwrap_or_else(|| logs.clone());
            let (report, sources) = cmd_report(&logs, &out)?;
            println!("report over {} logs ({} rows) written to {}", sources.logs.len(), report.rows.len(), out.display());
            Ok(if sources.skipped.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
        }
        Command::Hitl { scenario, bind, out, budget_ms } => {
            let text = std::fs::read_to_string(&scenario).map_err(|e| CliError::Usage(format!("{}: {e}", scenario.display())))?;
            let sc = Scenario::from_json(&text).map_err(|e| CliError::Usage(e.to_string()))?;
            if !(budget_ms > 0.0) {
                return Err(CliError::Usage("--budget-ms must be positive".into()));
            }
            let options = prosocial_hitl::ServerOptions {
                tick_budget_s: budget_ms / 1e3,
                output_dir: out,
                stale_after: Duration::from_secs(1),
                ..Default::default()
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            let summary = rt.block_on(async {
                let handle = prosocial_hitl::bind(sc, bind, options).await?;
                println!("serving on ws://{}/ws", handle.local_addr);
                handle.wait().await
            });
            let summary = summary.map_err(|e| match e {
                prosocial_hitl::HitlError::Scenario(m) => CliError::Usage(m),
                other => CliError::Runtime(other.to_string()),
            })?;
            println!("{} ticks, {} planner overruns, {} malformed messages", summary.ticks, summary.overruns, summary.malformed_messages);
            Ok(EXIT_OK)
        }
        Command::Scenario { seed, policy, human_model, external_human, out } => {
            let spec = ExperimentSpec { human_models: vec![human_model], ..ExperimentSpec::default() };
            let cfg = spec.validate()?;
            let mut sc = scenario_for(&spec, &cfg, &policy, seed)?;
            if external_human {
                for a in sc.agents.iter_mut().filter(|a| a.role == Role::Human) {
                    a.policy = PolicySpec::External;
                    a.noise = Default::default();
                }
                sc.label.human_model = "external".into();
            }
            match out {
                Some(path) => {
                    std::fs::write(&path, sc.to_json() + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
                }
                None => println!("{}", sc.to_json()),
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            return ExitCode::from(code as u8);
        }
    };
    let code = execute(cli.command).unwrap_or_else(|e| {
        eprintln!("{e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
