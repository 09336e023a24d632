use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use embedagent::config::ServerConfig;
use embedagent::gateway::{Gateway, RunningServer};
use embedagent::sim::scenario::Scenario;
use embedagent::sim::{run_concurrent, run_scenario, BatchReport, ScenarioReport, StepStatus};
use embedagent::tools::pfas_classify;
use embedagent::tracelog::{check_grounding, read_jsonl};
use serde::Deserialize;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "embedagent", version, about = "Backend runtime and test harness for embedded web agents")]
struct Cli {
    /// More log output (-v info, -vv debug including trace events).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the WebSocket gateway until interrupted.
    Serve {
        #[arg(long, short)]
        config: PathBuf,
        /// Overrides `bind` from the config file.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Run scenario files (or directories of them) one after another.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[command(flatten)]
        target: Target,
        /// Write the full JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run one scenario once per input set, concurrently, and check isolation.
    Concurrent {
        scenario: PathBuf,
        /// JSON array of `{"name": ..., "vars": {...}}` objects.
        #[arg(long)]
        matrix: PathBuf,
        #[arg(short = 'j', long, default_value_t = 10)]
        jobs: usize,
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check a JSONL trace log for actions outside the active function set.
    CheckTrace { trace: PathBuf },
    /// Print the Markdown wire-protocol reference.
    ProtocolDoc,
    /// Classify SMILES strings with the built-in PFAS tool.
    Classify {
        #[arg(required = true)]
        smiles: Vec<String>,
    },
}

#[derive(Args)]
struct Target {
    /// WebSocket endpoint of a running gateway.
    #[arg(long, conflicts_with = "config")]
    endpoint: Option<String>,
    /// Start an in-process gateway from this config instead.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

impl Target {
    async fn connect(&self) -> Result<(String, Option<RunningServer>)> {
        match (&self.endpoint, &self.config) {
            (Some(url), _) => Ok((url.clone(), None)),
            (None, Some(path)) => {
                let mut config = ServerConfig::load(path)?;
                config.bind = "127.0.0.1:0".into();
                let server = Gateway::from_config(config)?.spawn("127.0.0.1:0").await?;
                tracing::info!("in-process gateway at {}", server.ws_url());
                Ok((server.ws_url(), Some(server)))
            }
            (None, None) => bail!("pass --endpoint or --config"),
        }
    }
}

#[derive(Deserialize)]
struct MatrixEntry {
    name: String,
    #[serde(default)]
    vars: BTreeMap<String, String>,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn load_scenarios(paths: &[PathBuf]) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            out.extend(Scenario::load_dir(p).map_err(anyhow::Error::msg)?);
        } else {
            out.push(Scenario::load(p).map_err(anyhow::Error::msg)?);
        }
    }
    Ok(out)
}

fn write_report(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    if let Some(path) = path {
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn print_scenario(r: &ScenarioReport) {
    let verdict = if r.passed { "PASS" } else { "FAIL" };
    println!("{verdict} {} ({} ms)", r.name, r.elapsed_ms);
    for step in &r.steps {
        let mark = match step.status {
            StepStatus::Pass => "ok",
            StepStatus::Fail => "FAIL",
            StepStatus::Skipped => "skip",
            StepStatus::NotRun => "-",
        };
        let detail = step.detail.as_deref().map(|d| format!(": {d}")).unwrap_or_default();
        println!("  [{mark:>4}] {} {}{detail}", step.index, step.kind);
    }
}

fn print_batch(b: &BatchReport) {
    for r in &b.reports {
        print_scenario(r);
    }
    for c in &b.contamination {
        println!("LEAK {} saw `{}` from {}", c.scenario, c.foreign_marker, c.owner);
    }
    let passed = b.reports.iter().filter(|r| r.passed).count();
    println!("{passed}/{} passed, {} leaks, {} ms", b.reports.len(), b.contamination.len(), b.elapsed_ms);
}

async fn serve(config: &Path, bind: Option<String>) -> Result<()> {
    let mut config = ServerConfig::load(config)?;
    if let Some(bind) = bind {
        config.bind = bind;
    }
    let bind = config.bind.clone();
    let server = Gateway::from_config(config)?.spawn(&bind).await.with_context(|| format!("binding {bind}"))?;
    eprintln!("listening on {}", server.ws_url());
    tokio::signal::ctrl_c().await?;
    server.stop().await;
    Ok(())
}

async fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Serve { config, bind } => serve(&config, bind).await.map(|()| true),
        Command::Run { scenarios, target, report } => {
            let scenarios = load_scenarios(&scenarios)?;
            let (endpoint, server) = target.connect().await?;
            let mut reports = Vec::new();
            for s in &scenarios {
                let r = run_scenario(&endpoint, s).await;
                if !cli.json {
                    print_scenario(&r);
                }
                reports.push(r);
            }
            if let Some(server) = server {
                server.stop().await;
            }
            write_report(report.as_deref(), &reports)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&reports)?);
            }
            Ok(reports.iter().all(|r| r.passed))
        }
        Command::Concurrent {
            scenario,
            matrix,
            jobs,
            target,
            report,
        } => {
            let text = std::fs::read_to_string(&matrix).with_context(|| format!("reading {}", matrix.display()))?;
            let entries: Vec<MatrixEntry> = serde_json::from_str(&text).with_context(|| matrix.display().to_string())?;
            let scenarios = entries
                .iter()
                .map(|e| Scenario::load_with_vars(&scenario, &e.name, &e.vars))
                .collect::<Result<Vec<_>, _>>()
                .map_err(anyhow::Error::msg)?;
            let (endpoint, server) = target.connect().await?;
            let batch = run_concurrent(&endpoint, &scenarios, jobs).await;
            if let Some(server) = server {
                server.stop().await;
            }
            write_report(report.as_deref(), &batch)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&batch)?);
            } else {
                print_batch(&batch);
            }
            Ok(batch.passed)
        }
        Command::CheckTrace { trace } => {
            let events = read_jsonl(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let report = check_grounding(&events);
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for v in &report.violations {
                    println!("VIOLATION session {} seq {}: {} ({})", v.session, v.snapshot_seq, v.function, v.reason);
                }
                println!("{} actions checked, {} violations", report.actions_checked, report.violations.len());
            }
            Ok(report.is_clean())
        }
        Command::ProtocolDoc => {
            print!("{}", embedagent::wire::reference_markdown());
            Ok(true)
        }
        Command::Classify { smiles } => {
            let mut ok = true;
            let mut rows = Vec::new();
            for s in &smiles {
                match pfas_classify(s) {
                    Ok(v) => {
                        if !cli.json {
                            println!("{s}\tis_pfas={}\t{}", v.is_pfas, v.evidence.join("; "));
                        }
                        rows.push(serde_json::json!({"smiles": s, "is_pfas": v.is_pfas, "evidence": v.evidence}));
                    }
                    Err(e) => {
                        ok = false;
                        if !cli.json {
                            println!("{s}\terror: {e}");
                        }
                        rows.push(serde_json::json!({"smiles": s, "error": e.to_string()}));
                    }
                }
            }
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            }
            Ok(ok)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli).await {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
