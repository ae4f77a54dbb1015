use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use gamediag::jsonl;
use gamediag::{replay, ChildSpec, Service, ServiceConfig};
use gamediag_core::observer::{run_course, AmbientSchedule, SimConfig};
use gamediag_core::{ImpairmentProfile, TrialRecord};

#[derive(Parser)]
#[command(name = "gamediag", version, about = "Covert in-game vision screening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Play sessions with a simulated child and write the trial log.
    Simulate {
        /// ImpairmentProfile JSON; missing fields take emmetrope defaults.
        #[arg(long)]
        profile: PathBuf,
        /// Probe attempts per session.
        #[arg(long, default_value_t = 600)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        /// Time between session starts.
        #[arg(long, default_value_t = 86_400_000)]
        interval_ms: i64,
        #[arg(long, default_value = "child")]
        child: String,
        /// Service configuration supplying screen and session settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Derive the report of a trial log.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "child")]
        child: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the current report of a registered child from the data directory.
    Report {
        #[arg(long)]
        child: String,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rebuild the report from a log; with --check also verify it against
    /// trial-by-trial ingestion.
    Replay {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        check: bool,
        #[arg(long, default_value = "child")]
        child: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ServiceConfig> {
    match path {
        Some(p) => ServiceConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(ServiceConfig::default()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(w.flush()?)
}

fn simulate(
    profile: &Path,
    trials: usize,
    seed: u64,
    out: &Path,
    sessions: usize,
    interval_ms: i64,
    child: &str,
    config: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let profile: ImpairmentProfile = serde_json::from_str(&fs::read_to_string(profile)?)
        .with_context(|| format!("parsing profile {}", profile.display()))?;
    let sim = SimConfig { session: cfg.core.session.clone(), stimulus: cfg.core.stimulus.clone(), ..SimConfig::default() };
    let log = run_course(
        child,
        |_| profile.clone(),
        &cfg.core.screen,
        &AmbientSchedule::default(),
        sessions,
        trials,
        interval_ms,
        seed,
        &sim,
    )?;
    jsonl::write_all(BufWriter::new(File::create(out)?), &log)?;
    eprintln!("wrote {} trials in {sessions} session(s) to {}", log.len(), out.display());
    Ok(())
}

/// Ingests `input` one trial at a time into a scratch service, asking for the
/// report after every session, and compares the final bytes with a replay.
fn check_replay(input: &Path, child: &str, cfg: &ServiceConfig) -> anyhow::Result<bool> {
    let trials: Vec<TrialRecord> = jsonl::read_all(BufReader::new(File::open(input)?))?;
    let replayed = serde_json::to_vec(&replay(child, BufReader::new(File::open(input)?), &cfg.core)?.report)?;

    let dir = std::env::temp_dir().join(format!("gamediag-check-{}", std::process::id()));
    let scratch = ServiceConfig { data_dir: dir.clone(), children: Vec::new(), ..cfg.clone() };
    let result = (|| {
        let svc = Service::open(scratch)?;
        svc.register_child(&ChildSpec { child_id: child.into(), display_name: String::new(), screen: None })?;
        let mut appended = 0;
        for (i, t) in trials.iter().enumerate() {
            appended += usize::from(svc.ingest_record(child, &t.session_id, t.clone())?.appended);
            if trials.get(i + 1).is_none_or(|n| n.session_id != t.session_id) {
                svc.report(child)?;
            }
        }
        let incremental = serde_json::to_vec(&svc.report(child)?)?;
        eprintln!(
            "{} lines, {appended} distinct trials, report {} bytes",
            trials.len(),
            incremental.len()
        );
        anyhow::Ok(incremental == replayed)
    })();
    let _ = fs::remove_dir_all(&dir);
    result
}

async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    let addr = SocketAddr::from(([127, 0, 0, 1], cfg.port));
    let svc = Arc::new(Service::open(cfg)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, gamediag::http::router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate { profile, trials, seed, out, sessions, interval_ms, child, config } => {
            simulate(&profile, trials, seed, &out, sessions, interval_ms, &child, config.as_deref())?;
        }
        Command::Fit { input, out, child, config } => {
            let cfg = load_config(config.as_deref())?;
            let state = replay(&child, BufReader::new(File::open(&input)?), &cfg.core)?;
            write_json(&out, &state.report)?;
        }
        Command::Report { child, format: Format::Json, config } => {
            let svc = Service::open(load_config(config.as_deref())?)?;
            println!("{}", serde_json::to_string_pretty(&svc.report(&child)?)?);
        }
        Command::Serve { config } => {
            let cfg = load_config(config.as_deref())?;
            tokio::runtime::Runtime::new()?.block_on(serve(cfg))?;
        }
        Command::Replay { input, check, child, config } => {
            let cfg = load_config(config.as_deref())?;
            if !check {
                let state = replay(&child, BufReader::new(File::open(&input)?), &cfg.core)?;
                println!("{}", serde_json::to_string_pretty(&state.report)?);
            } else if check_replay(&input, &child, &cfg)? {
                println!("ok: replay matches incremental ingestion");
            } else {
                println!("MISMATCH: replay differs from incremental ingestion");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<gamediag::jsonl::ReplayError>().is_some() {
                return ExitCode::from(3);
            }
            ExitCode::from(2)
        }
    }
}
