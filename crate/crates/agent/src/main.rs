use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gridhall_agent::{Agent, AgentError, Cache, Runner, Source};
use gridhall_core::launcher::DescriptorKey;

#[derive(Parser)]
#[command(name = "agent", version, about = "gridhall local launcher")]
struct Cli {
    /// Image cache directory [default: platform cache dir]
    #[arg(long, global = true, env = "GRIDHALL_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunnerKind {
    Noop,
    Process,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch a descriptor (URL or file), cache its image and start it
    Launch {
        source: String,
        #[arg(long, value_enum, default_value = "noop")]
        runner: RunnerKind,
        /// Argv template for the process runner; must contain {image}
        #[arg(long, required_if_eq("runner", "process"))]
        command: Option<String>,
        /// Hex key that signs descriptors
        #[arg(long, env = "GRIDHALL_DESCRIPTOR_KEY", hide_env_values = true)]
        descriptor_key: String,
        /// Service base URL for run reports
        #[arg(long)]
        server: Option<url::Url>,
    },
    /// Evict least-recently-used images until the cache fits
    Gc {
        #[arg(long)]
        max_bytes: u64,
    },
    /// List cached images
    Status {
        #[arg(long)]
        json: bool,
    },
}

async fn run(cli: Cli) -> Result<(), AgentError> {
    let cache = Cache::open(cli.cache_dir.unwrap_or_else(Cache::default_dir))?;
    match cli.command {
        Command::Launch {
            source,
            runner,
            command,
            descriptor_key,
            server,
        } => {
            let key =
                DescriptorKey::from_hex(&descriptor_key).map_err(|e| AgentError::Config(e.to_string()))?;
            let runner = match runner {
                RunnerKind::Noop => Runner::noop(cache.runs_dir()),
                RunnerKind::Process => Runner::process(command.as_deref().unwrap_or_default())?,
            };
            let mut agent = Agent::new(cache, key, runner);
            agent.server = server;
            let outcome = agent.launch(&Source::parse(&source)).await?;
            println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
        }
        Command::Gc { max_bytes } => {
            let lock = cache.lock_async().await?;
            for e in cache.gc(&lock, max_bytes)? {
                println!("evicted {} {}", e.blob_digest, e.size_bytes);
            }
        }
        Command::Status { json } => {
            let entries = cache.entries()?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&entries).expect("entries serialize")
                );
            } else {
                println!("cache {}", cache.root().display());
                for e in &entries {
                    println!(
                        "{}  {:>12}  fetched {}  used {}",
                        e.blob_digest,
                        e.size_bytes,
                        e.fetched_at.to_rfc3339(),
                        e.last_used_at.to_rfc3339()
                    );
                }
                println!("{} images, {} bytes", entries.len(), cache.total_bytes()?);
            }
        }
    }
    Ok(())
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("agent: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
