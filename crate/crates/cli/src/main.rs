//! `hsi`: run, serve, replay, rescore and analyze testbed sessions.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 config error,
//! 4 log integrity or schema error, 5 i/o or cohort ingestion error.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hsi_core::intervention::{ScriptedOperator, ScriptedPolicy};
use hsi_core::sagat::{ScoringConfig, ScriptedRespondent};
use hsi_core::session::{
    hash_hex, replay, rescore, run_session, FileSink, LineSink, ScriptedSession, SessionConfig, SessionError, SessionLog,
    SessionSetup,
};
use hsi_core::stats::{build_cohort, experiment_reports, AnalysisConfig, CohortError};
use hsi_core::synthetic::{generate, SyntheticConfig};
use hsi_gateway::{serve, GatewayConfig, GatewayError};

const LOG_DIR_ENV: &str = "HSI_LOG_DIR";

#[derive(Parser)]
#[command(name = "hsi", version, about = "Human-swarm interaction testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one session against a scripted policy or a live console.
    Run(RunArgs),
    /// Run one session against a console connecting to --listen.
    Serve(ServeArgs),
    /// Re-simulate a log and check every state hash.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Recompute a log's report under another scoring config.
    Rescore {
        #[arg(long)]
        log: PathBuf,
        /// TOML scoring config; the log's own is used when absent.
        #[arg(long)]
        scoring: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the cohort from a log directory and write the analysis report.
    Analyze {
        #[arg(long)]
        logs: PathBuf,
        /// `.csv` writes the table form; anything else the text form.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        scoring: Option<PathBuf>,
        /// TOML analysis config (alpha, spearman method, correction).
        #[arg(long)]
        analysis: Option<PathBuf>,
        /// Also write the cohort table as CSV.
        #[arg(long)]
        cohort_csv: Option<PathBuf>,
    },
    /// Generate a synthetic cohort of scripted participants.
    Cohort {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        participants: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Base session config shared by every task.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OperatorKind {
    Policy,
    Gateway,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyName {
    Passive,
    OracleMarker,
    NoisyMarker,
    RandomSwiper,
}

#[derive(clap::Args)]
struct SessionArgs {
    /// TOML session config; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Log path. Relative paths resolve under $HSI_LOG_DIR when set.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long, value_enum, default_value_t = OperatorKind::Policy)]
    operator: OperatorKind,
    #[arg(long, value_enum, default_value_t = PolicyName::OracleMarker)]
    policy: PolicyName,
    /// Marking accuracy for noisy-marker.
    #[arg(long, default_value_t = 0.8)]
    accuracy: f64,
    #[arg(long, default_value_t = 10)]
    delay_ticks: u64,
    /// Swipe interval for random-swiper.
    #[arg(long, default_value_t = 50)]
    interval_ticks: u64,
    /// Probability the scripted respondent answers SAGAT queries correctly.
    #[arg(long, default_value_t = 1.0)]
    respondent_accuracy: f64,
    /// Self-assessed level in [0, 1] for scripted SART ratings; omit to skip the form.
    #[arg(long)]
    sart_level: Option<f64>,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(clap::Args)]
struct GatewayArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// TOML gateway config.
    #[arg(long)]
    gateway_config: Option<PathBuf>,
    /// Snapshots per second; overrides the gateway config.
    #[arg(long)]
    render_hz: Option<f64>,
    /// Simulated seconds per wall second; 0 runs unpaced.
    #[arg(long)]
    time_scale: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<SessionError>() {
            return session_code(s);
        }
        if let Some(g) = cause.downcast_ref::<GatewayError>() {
            return match g {
                GatewayError::Config(_) => 3,
                GatewayError::Io(_) => 5,
                GatewayError::Session(s) => session_code(s),
            };
        }
        if let Some(c) = cause.downcast_ref::<CohortError>() {
            return match c {
                CohortError::Log { source, .. } if !matches!(source, SessionError::Io(_)) => session_code(source),
                _ => 5,
            };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 5;
        }
    }
    1
}

fn session_code(s: &SessionError) -> u8 {
    match s {
        SessionError::Config(_) => 3,
        SessionError::Schema(_) | SessionError::Integrity { .. } => 4,
        SessionError::Io(_) => 5,
    }
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(args) => run(args),
        Command::Serve(args) => {
            let setup = prepare(&args.session)?;
            let out = log_path(&args.session, &setup)?;
            serve_session(&setup, &args.gateway, &out)
        }
        Command::Replay { log } => {
            let parsed = SessionLog::read(&log)?;
            let r = replay(&parsed)?;
            println!(
                "{}: {} state hashes verified, final {}, {}",
                log.display(),
                r.hashes_checked,
                hash_hex(r.final_hash),
                if r.complete { "complete" } else { "incomplete (aborted)" }
            );
            Ok(())
        }
        Command::Rescore { log, scoring, out } => {
            let parsed = SessionLog::read(&log)?;
            let scoring = match scoring {
                Some(p) => read_toml::<ScoringConfig>(&p)?,
                None => parsed.header.config.scoring.clone(),
            };
            let report = rescore(&parsed, &scoring)?;
            let json = serde_json::to_string_pretty(&report)?;
            write_or_print(out.as_deref(), &json)
        }
        Command::Analyze { logs, out, scoring, analysis, cohort_csv } => {
            let scoring = scoring.map(|p| read_toml::<ScoringConfig>(&p)).transpose()?;
            let cfg = analysis.map(|p| read_toml::<AnalysisConfig>(&p)).transpose()?.unwrap_or_default();
            let cohort = build_cohort(&logs, scoring.as_ref())?;
            if let Some(p) = cohort_csv {
                fs::write(&p, cohort.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            if cohort.is_empty() {
                return Err(CohortError::Dir(logs.display().to_string(), "no session logs found".into()).into());
            }
            let report = experiment_reports(&cohort, &cfg)?;
            let csv = out.as_ref().and_then(|p| p.extension()).is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let body = if csv { report.to_csv() } else { report.to_text() };
            write_or_print(out.as_deref(), &body)
        }
        Command::Cohort { out, participants, seed, config } => {
            let base = match config {
                Some(p) => load_config(&p)?,
                None => SessionConfig::default(),
            };
            let cfg = SyntheticConfig { participants, seed, base, ..Default::default() };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let logs = generate(&cfg, Some(&out))?;
            println!("wrote {} session logs to {}", logs.len(), out.display());
            Ok(())
        }
    }
}

fn write_or_print(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{body}");
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<SessionConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SessionConfig::from_toml(&text)?)
}

fn prepare(args: &SessionArgs) -> Result<SessionSetup> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => SessionConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg.prepare()?)
}

fn log_path(args: &SessionArgs, setup: &SessionSetup) -> Result<PathBuf> {
    let c = &setup.config;
    let name = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}_{}_{:?}_{}.jsonl", c.participant_id, c.hazard_kind, c.attempt, c.seed)));
    let path = match std::env::var_os(LOG_DIR_ENV) {
        Some(dir) if name.is_relative() => PathBuf::from(dir).join(name),
        _ => name,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(path)
}

fn run(args: RunArgs) -> Result<()> {
    let setup = prepare(&args.session)?;
    let out = log_path(&args.session, &setup)?;
    if args.operator == OperatorKind::Gateway {
        return serve_session(&setup, &args.gateway, &out);
    }
    let policy = match args.policy {
        PolicyName::Passive => ScriptedPolicy::Passive,
        PolicyName::OracleMarker => ScriptedPolicy::OracleMarker,
        PolicyName::NoisyMarker => ScriptedPolicy::NoisyMarker { accuracy: args.accuracy, delay_ticks: args.delay_ticks },
        PolicyName::RandomSwiper => ScriptedPolicy::RandomSwiper { interval_ticks: args.interval_ticks },
    };
    if !(0.0..=1.0).contains(&args.respondent_accuracy) {
        bail!(config_err("respondent accuracy must lie in [0, 1]"));
    }
    if args.sart_level.is_some_and(|l| !(0.0..=1.0).contains(&l)) {
        bail!(config_err("sart level must lie in [0, 1]"));
    }
    let cfg = &setup.config;
    let mut op = ScriptedSession::new(
        ScriptedOperator::new(policy, cfg.stream("operator")).map_err(|e| config_err(e.to_string()))?,
        ScriptedRespondent::new(args.respondent_accuracy, cfg.stream("respondent")),
        args.sart_level,
        cfg.stream("sart"),
    );
    let mut sink = FileSink::create(&out)?;
    let outcome = run_session(&setup, &mut op, &mut sink)?;
    sink.finish()?;
    log::info!("{:?}, final hash {}, log {}", outcome.end, hash_hex(outcome.final_hash), out.display());
    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    Ok(())
}

fn serve_session(setup: &SessionSetup, args: &GatewayArgs, out: &Path) -> Result<()> {
    let mut cfg = match &args.gateway_config {
        Some(p) => read_toml::<GatewayConfig>(p)?,
        None => GatewayConfig::default(),
    };
    if let Some(hz) = args.render_hz {
        cfg.render_hz = hz;
    }
    match args.time_scale {
        Some(0.0) => cfg.time_scale = None,
        Some(s) => cfg.time_scale = Some(s),
        None => {}
    }
    let listener = TcpListener::bind(&args.listen).with_context(|| format!("binding {}", args.listen))?;
    log::info!("waiting for a console on {}", listener.local_addr().map_err(|e| anyhow!(e))?);
    let mut sink = FileSink::create(out)?;
    let outcome = serve(setup, listener, &cfg, &mut sink)?;
    sink.finish()?;
    log::info!("{:?}, final hash {}, log {}", outcome.end, hash_hex(outcome.final_hash), out.display());
    println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    Ok(())
}
