use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;
use tracing_subscriber::EnvFilter;
use vitaldx_core::adapter::Adapter;
use vitaldx_core::canonical::to_canonical_string;
use vitaldx_core::simulator::{
    run_scenario, AnomalyScript, ClinicianPolicy, PatientProfile, Pipeline, RunSummary, ScenarioSpec,
};
use vitaldx_gateway::api::{self, AppState};
use vitaldx_gateway::auth::TokenTable;
use vitaldx_gateway::chain::{verify_text, ChainError};
use vitaldx_gateway::config::{ClockMode, ServiceConfig};
use vitaldx_gateway::remote::RemotePipeline;
use vitaldx_gateway::replay::{render_reports, replay_file};
use vitaldx_gateway::service::Service;

#[derive(Parser)]
#[command(name = "vitaldx", version, about = "Dual-track chronic care engine driven by wearable vitals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rebuild state from a log with the mock adapter and print its digest.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write every report, one canonical JSON line each.
        #[arg(long)]
        reports_out: Option<PathBuf>,
    },
    /// Check the hash chain of a log and print its head.
    Verify {
        #[arg(long)]
        log: PathBuf,
    },
    /// Generate a synthetic patient and drive the pipeline with it.
    Simulate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        seed: u64,
        /// Post to a gateway running the manual clock.
        #[arg(long, conflicts_with = "out", requires = "token")]
        post: Option<String>,
        /// Service token for --post.
        #[arg(long)]
        token: Option<String>,
        /// Clinician token for --post verdicts; defaults to --token.
        #[arg(long)]
        clinician_token: Option<String>,
        /// Write the run's hash-chained log to this (new) file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Engine settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Quiet time after the last sample.
        #[arg(long, default_value_t = 0.0)]
        settle: f64,
        /// Clinician approval probability.
        #[arg(long)]
        approve: Option<f64>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config } => serve(&config),
        Command::Replay { log, config, reports_out } => {
            replay(&log, config.as_deref(), reports_out.as_deref())
        }
        Command::Verify { log } => return verify(&log),
        Command::Simulate {
            profile,
            script,
            duration,
            seed,
            post,
            token,
            clinician_token,
            out,
            config,
            settle,
            approve,
        } => simulate(SimulateArgs {
            profile,
            script,
            duration,
            seed,
            post,
            token,
            clinician_token,
            out,
            config,
            settle,
            approve,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ServiceConfig> {
    match path {
        Some(p) => Ok(ServiceConfig::load(p)?),
        None => Ok(ServiceConfig::default()),
    }
}

fn serve(path: &Path) -> anyhow::Result<()> {
    let config = ServiceConfig::load(path)?;
    if config.auth.tokens.is_empty() {
        tracing::warn!("no tokens configured; every request will be refused");
    }
    let service = Service::open(&config).context("opening the log")?;
    let tokens = TokenTable::new(&config.auth.tokens);
    let state = AppState::new(service, tokens, config.server.clock);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.server.listen)
            .await
            .with_context(|| format!("binding {}", config.server.listen))?;
        tracing::info!(addr = %listener.local_addr()?, clock = ?config.server.clock, "serving");
        if config.server.clock == ClockMode::Wall {
            let interval = Duration::from_secs_f64(config.server.tick_interval_seconds);
            tokio::spawn(api::run_ticker(state.clone(), interval));
        }
        axum::serve(listener, api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn replay(log: &Path, config: Option<&Path>, reports_out: Option<&Path>) -> anyhow::Result<()> {
    let config = load_config(config)?;
    let replayed = replay_file(log, &config.engine())?;
    if let Some(out) = reports_out {
        std::fs::write(out, render_reports(&replayed.engine))
            .with_context(|| format!("writing {}", out.display()))?;
    }
    let report = json!({
        "state_digest": replayed.engine.state_digest(),
        "log_head": replayed.head.digest,
        "records": replayed.head.next_seq,
    });
    println!("{}", to_canonical_string(&report));
    Ok(())
}

fn verify(log: &Path) -> ExitCode {
    let bytes = match std::fs::read(log) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => {
            eprintln!("error: {}: {e}", log.display());
            return ExitCode::from(2);
        }
    };
    match verify_text(&bytes) {
        Ok((_, head)) => {
            println!("{}", to_canonical_string(&json!({"head": head.digest, "records": head.next_seq})));
            ExitCode::SUCCESS
        }
        Err(e @ ChainError::InvalidChain { .. }) => {
            println!(
                "{}",
                to_canonical_string(
                    &json!({"error": "InvalidChain", "seq": e.seq(), "message": e.to_string()})
                )
            );
            ExitCode::from(1)
        }
    }
}

/// Profiles and scripts are TOML, or JSON when the file ends in `.json`.
fn read_document<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow::anyhow!("{}: {}: {}", path.display(), e.path(), e.inner()))?
    } else {
        let de =
            toml::de::Deserializer::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        serde_path_to_error::deserialize(de)
            .map_err(|e| anyhow::anyhow!("{}: {}: {}", path.display(), e.path(), e.inner().message()))?
    };
    Ok(parsed)
}

struct SimulateArgs {
    profile: PathBuf,
    script: PathBuf,
    duration: f64,
    seed: u64,
    post: Option<String>,
    token: Option<String>,
    clinician_token: Option<String>,
    out: Option<PathBuf>,
    config: Option<PathBuf>,
    settle: f64,
    approve: Option<f64>,
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let profile: PatientProfile = read_document(&args.profile)?;
    let script: AnomalyScript = read_document(&args.script)?;
    let config = load_config(args.config.as_deref())?;
    let mut clinician = ClinicianPolicy::default();
    if let Some(p) = args.approve {
        if !(0.0..=1.0).contains(&p) {
            bail!("--approve must be within [0, 1]");
        }
        clinician.approve_probability = p;
        clinician.reject_probability = 1.0 - p;
    }
    let spec = ScenarioSpec {
        profile,
        script,
        duration_seconds: args.duration,
        seed: args.seed,
        step_seconds: 60.0,
        answer_delay_seconds: 15.0,
        ignore_probability: 0.0,
        clinician,
        settle_seconds: args.settle,
    };
    let (summary, digest, extra) = if let Some(url) = args.post {
        let token = args.token.expect("clap requires --token with --post");
        let clinician_token = args.clinician_token.unwrap_or_else(|| token.clone());
        let mut remote = RemotePipeline::new(&url, &token, &clinician_token, config.engine());
        let summary = run_scenario(&mut remote, &spec)?;
        let posted = remote.posted();
        (summary, remote.engine().state_digest(), json!({"posted": posted}))
    } else if let Some(out) = args.out {
        if out.exists() {
            bail!("{} already exists", out.display());
        }
        let mut service =
            Service::on_log(config.engine(), Adapter::mock(), &out, config.server.feed_capacity)?;
        let summary = run_scenario(&mut service, &spec)?;
        let head = service.head().clone();
        (
            summary,
            service.engine().state_digest(),
            json!({"log": out, "log_head": head.digest, "records": head.next_seq}),
        )
    } else {
        let mut service = Service::in_memory(config.engine(), Adapter::mock());
        let summary = run_scenario(&mut service, &spec)?;
        let head = service.head().clone();
        (summary, service.engine().state_digest(), json!({"log_head": head.digest, "records": head.next_seq}))
    };
    print_summary(&summary, &digest, extra);
    Ok(())
}

fn print_summary(summary: &RunSummary, digest: &str, extra: serde_json::Value) {
    let mut out = json!({
        "samples": summary.samples,
        "inputs": summary.inputs,
        "refused": summary.refused,
        "descriptors": summary.descriptors.len(),
        "end": summary.end,
        "state_digest": digest,
    });
    if let (Some(map), serde_json::Value::Object(more)) = (out.as_object_mut(), extra) {
        map.extend(more);
    }
    println!("{}", to_canonical_string(&out));
}
