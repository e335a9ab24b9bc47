use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use gridhall_core::analytics::{UsageReport, Window};
use gridhall_core::launcher::DescriptorKey;
use gridhall_core::vault::MasterKey;
use gridhall_server::config::ServiceConfig;

#[derive(Parser)]
#[command(
    name = "gridhall",
    version,
    about = "Citizen-science application hosting service"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service and the instance poller.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured port.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Bring the database schema up to date (or to --target).
    Migrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        target: Option<u32>,
    },
    /// Analytics exports.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Print a fresh master key and the descriptor key derived from it.
    Keygen,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Usage report for a half-open window `<rfc3339>/<rfc3339>`.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        window: String,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn write_usage(report: &UsageReport, format: Format, out: impl Write) -> anyhow::Result<()> {
    match format {
        Format::Json => serde_json::to_writer_pretty(out, report)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record([
                "window_start",
                "window_end",
                "sessions",
                "users",
                "page_views",
                "pages_per_session",
                "avg_session_duration",
                "bounce_rate",
                "new_visitors",
                "returning_visitors",
            ])?;
            let (start, end) = report
                .window
                .map(|w| (w.start.to_rfc3339(), w.end.to_rfc3339()))
                .unwrap_or_default();
            w.write_record([
                start,
                end,
                report.sessions.to_string(),
                report.users.to_string(),
                report.page_views.to_string(),
                report.pages_per_session.to_string(),
                report.avg_session_duration.to_string(),
                report.bounce_rate.to_string(),
                report.new_visitors.to_string(),
                report.returning_visitors.to_string(),
            ])?;
            w.flush()?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { config, port } => {
            let mut cfg = ServiceConfig::load(&config)?;
            if let Some(p) = port {
                cfg.port = p;
            }
            let platform = cfg.platform()?;
            let addr = format!("{}:{}", cfg.bind, cfg.port);
            let listener = tokio::net::TcpListener::bind(&addr)
                .await
                .with_context(|| format!("binding {addr}"))?;
            let running = gridhall_server::serve_on(listener, platform, true)?;
            tracing::info!(addr = %running.addr, "serving");
            tokio::signal::ctrl_c().await?;
            tracing::info!("shutting down");
        }
        Command::Migrate { config, target } => {
            let cfg = ServiceConfig::load(&config)?;
            let applied = cfg.open_storage()?.migrate(target)?;
            if applied.is_empty() {
                println!("schema already up to date");
            } else {
                for v in applied {
                    println!("applied migration {v}");
                }
            }
        }
        Command::Stats {
            command:
                StatsCommand::Export {
                    config,
                    window,
                    format,
                },
        } => {
            let cfg = ServiceConfig::load(&config)?;
            let window: Window = window.parse()?;
            let report = cfg.platform()?.usage_report(window)?;
            write_usage(&report, format, std::io::stdout().lock())?;
            println!();
        }
        Command::Keygen => {
            let key = MasterKey::generate();
            println!("MASTER_KEY={}", key.to_base64());
            println!("DESCRIPTOR_KEY={}", DescriptorKey::derive(&key).to_hex());
        }
    }
    Ok(())
}
