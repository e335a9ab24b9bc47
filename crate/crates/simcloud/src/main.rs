use clap::Parser;
use tracing_subscriber::EnvFilter;

use simcloud::{SimConfig, SimState};

#[derive(Parser)]
#[command(name = "simcloud", about = "Simulated EC2-like compute provider")]
struct Args {
    #[arg(long, default_value_t = 9400)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Maximum live instances.
    #[arg(long, default_value_t = 64)]
    capacity: usize,
    /// Ticks an instance stays pending before it runs.
    #[arg(long, default_value_t = 1)]
    run_delay_ticks: u32,
    /// Probability in [0, 1] that a launch ends in `failed`.
    #[arg(long, default_value_t = 0.0)]
    fail_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Account credentials as ACCESS_KEY:SECRET; repeatable.
    #[arg(long = "key", value_name = "AK:SK")]
    keys: Vec<String>,
    /// Comma-separated timeline for new instances, e.g. pending,pending,running.
    #[arg(long)]
    script: Option<String>,
    /// Advance time only through POST /_sim/tick.
    #[arg(long)]
    manual_ticks: bool,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    if !(0.0..=1.0).contains(&args.fail_rate) {
        anyhow::bail!("--fail-rate must be within [0, 1]");
    }
    let listener = tokio::net::TcpListener::bind((args.bind.as_str(), args.port)).await?;
    let handle = simcloud::serve_on(
        listener,
        SimConfig {
            capacity: args.capacity,
            run_delay_ticks: args.run_delay_ticks,
            fail_rate: args.fail_rate,
            seed: args.seed,
            tick_on_describe: !args.manual_ticks,
            ..SimConfig::default()
        },
    )
    .await?;
    for k in &args.keys {
        let (ak, sk) = k
            .split_once(':')
            .ok_or_else(|| anyhow::anyhow!("--key expects ACCESS_KEY:SECRET, got `{k}`"))?;
        handle.add_key(ak, sk);
    }
    if let Some(script) = &args.script {
        let steps = script
            .split(',')
            .map(|s| serde_json::from_value::<SimState>(serde_json::Value::String(s.trim().into())))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| anyhow::anyhow!("bad --script: {e}"))?;
        handle.sim().set_script(Some(steps));
    }
    tracing::info!("simulated provider listening on {}", handle.url());
    tokio::signal::ctrl_c().await?;
    Ok(())
}
