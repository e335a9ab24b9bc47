use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use gridhall_swarm::{compare_reports, run_swarm, LoadReport, Mix, Stub, SwarmConfig, SwarmError, Transport};
use url::Url;

#[derive(Parser)]
#[command(name = "swarm", version, about = "gridhall load generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run virtual users against a target and write a report
    Run {
        #[arg(long)]
        target: Url,
        #[arg(long, default_value_t = 10)]
        users: u32,
        /// Users started per second
        #[arg(long, default_value_t = 10.0)]
        spawn_rate: f64,
        /// Seconds
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Scenario mix (TOML) [default: built-in mix]
        #[arg(long)]
        mix: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cap on requests in flight
        #[arg(long, default_value_t = 512)]
        max_open: usize,
    },
    /// Flag routes whose p95 regressed; exit 1 on regression, 2 if the
    /// reports cover different routes
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        p95_threshold: f64,
    },
    /// Serve the deterministic stub over HTTP
    Stub {
        #[arg(long, default_value_t = 8089)]
        port: u16,
        #[arg(long, default_value_t = 5)]
        latency_ms: u64,
    },
    /// Print the built-in scenario mix
    DefaultMix,
}

fn read_report(p: &PathBuf) -> Result<LoadReport, SwarmError> {
    let bytes = std::fs::read(p)?;
    serde_json::from_slice(&bytes).map_err(|e| SwarmError::SchemaMismatch(format!("{}: {e}", p.display())))
}

async fn run(cli: Cli) -> Result<ExitCode, SwarmError> {
    match cli.command {
        Command::Run {
            target,
            users,
            spawn_rate,
            duration,
            mix,
            seed,
            out,
            max_open,
        } => {
            if !(duration.is_finite() && duration > 0.0) {
                return Err(SwarmError::ConfigInvalid("duration must be positive".into()));
            }
            let mut cfg =
                SwarmConfig::new(target, users, spawn_rate, Duration::from_secs_f64(duration), seed);
            cfg.max_open_requests = max_open;
            if let Some(path) = mix {
                cfg.mix = Mix::parse(&std::fs::read_to_string(&path)?)?;
            }
            let report = run_swarm(cfg, Transport::http(max_open)).await?;
            print!("{}", report.to_table());
            if let Some(out) = out {
                std::fs::write(
                    out,
                    serde_json::to_vec_pretty(&report).expect("report serializes"),
                )?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            baseline,
            candidate,
            p95_threshold,
        } => {
            let verdict =
                compare_reports(&read_report(&baseline)?, &read_report(&candidate)?, p95_threshold)?;
            for r in &verdict.regressions {
                println!(
                    "REGRESSED {}: p95 {:.1} ms -> {:.1} ms",
                    r.route,
                    r.baseline_p95_us as f64 / 1000.0,
                    r.candidate_p95_us as f64 / 1000.0
                );
            }
            if verdict.passed() {
                println!("ok: no route regressed more than {p95_threshold}%");
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Stub { port, latency_ms } => {
            let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
            eprintln!("stub listening on http://{}", listener.local_addr()?);
            Stub::new(Duration::from_millis(latency_ms))
                .serve(listener)
                .await?;
            Ok(ExitCode::SUCCESS)
        }
        Command::DefaultMix => {
            print!("{}", gridhall_swarm::config::DEFAULT_MIX);
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("swarm: {e}");
            ExitCode::from(if matches!(e, SwarmError::SchemaMismatch(_)) {
                2
            } else {
                1
            })
        }
    }
}
