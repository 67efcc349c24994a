//! Runs a guess-the-average simulation and writes its results.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for failures
//! while running.

use std::path::PathBuf;
use std::process::ExitCode;

use agentsim::backend::RemoteConfig;
use agentsim::game::export_results;
use agentsim::manager::{HubClient, RoundSummary};
use agentsim::sim::{run_simulation, BackendKind, SimError, SimSpec};
use clap::Parser;

#[derive(Parser, Debug)]
#[command(name = "simrun", about = "Run a guess-a-fraction-of-the-average simulation")]
struct Args {
    #[arg(long)]
    agents: usize,
    #[arg(long)]
    rounds: usize,
    /// Ratio applied to the average, as P/Q.
    #[arg(long, default_value = "2/3")]
    ratio: String,
    /// Constant added to the ratio times the average.
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    /// Append the note that the game is a variation of the classic one.
    #[arg(long)]
    note: bool,
    /// System prompt: 1, 2, 3, 4, 5, 7 or group.
    #[arg(long, default_value = "2")]
    prompt: String,
    /// strategy, dummy, scripted or remote.
    #[arg(long, default_value = "strategy")]
    backend: BackendKind,
    /// Comma-separated kind[:param]=weight entries summing to 1.
    #[arg(long)]
    strategy_mix: Option<String>,
    /// Play in K groups.
    #[arg(long)]
    groups: Option<usize>,
    /// Population YAML used to generate backgrounds for prompt 5.
    #[arg(long)]
    population_config: Option<PathBuf>,
    /// Agent servers to place players on, comma-separated host:port.
    #[arg(long, value_delimiter = ',')]
    servers: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Responses for the scripted backend: a JSON array of strings, or one
    /// response per line.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Base URL of a chat-completions endpoint for the remote backend.
    #[arg(long)]
    remote_url: Option<String>,
    #[arg(long, default_value = "default")]
    remote_model: String,
    /// Environment variable holding the remote API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Dummy backend latency in milliseconds (default 1000).
    #[arg(long)]
    dummy_delay_ms: Option<u64>,
    /// Hub to post round progress to.
    #[arg(long)]
    hub: Option<String>,
    /// Simulation id used when posting to the hub (default: generated).
    #[arg(long)]
    sim_id: Option<String>,
    /// Output directory for rounds.json, stats.csv and hist.csv.
    #[arg(long)]
    out: PathBuf,
}

fn read_script(path: &PathBuf) -> Result<Vec<String>, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
    if let Ok(list) = serde_json::from_str::<Vec<String>>(&text) {
        return Ok(list);
    }
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn spec_from(args: &Args) -> Result<SimSpec, SimError> {
    let script = match &args.script {
        Some(p) => read_script(p)?,
        None => Vec::new(),
    };
    let remote = args.remote_url.as_ref().map(|url| RemoteConfig {
        base_url: url.clone(),
        model: args.remote_model.clone(),
        api_key_env: args.api_key_env.clone(),
        timeout_s: 120,
    });
    Ok(SimSpec {
        agents: args.agents,
        rounds: args.rounds,
        ratio: args.ratio.clone(),
        offset: args.offset,
        note: args.note,
        prompt: args.prompt.clone(),
        backend: args.backend,
        strategy_mix: args.strategy_mix.clone(),
        groups: args.groups,
        population_config: args.population_config.clone(),
        servers: args.servers.clone(),
        seed: args.seed,
        temperature: args.temperature,
        script,
        remote,
        dummy_delay_ms: args.dummy_delay_ms,
    })
}

fn run(args: &Args) -> Result<(), SimError> {
    let spec = spec_from(args)?;
    spec.plan()?;
    let hub = args.hub.as_ref().map(|u| HubClient::new(u.clone()));
    let sim_id = args
        .sim_id
        .clone()
        .unwrap_or_else(|| format!("sim-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]));
    if hub.is_some() {
        println!("simulation {sim_id}");
    }
    println!("{:>5} {:>10} {:>10} {:>10} {:>10} {:>8}", "round", "avg", "target", "min", "max", "winners");
    let results = run_simulation(&spec, |r| {
        println!(
            "{:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8}",
            r.round_index,
            r.stats.avg,
            r.target,
            r.stats.min,
            r.stats.max,
            r.band_winners.len()
        );
        if let Some(h) = &hub {
            let summary = RoundSummary { round_index: r.round_index, target: r.target, stats: r.stats };
            if let Err(e) = h.post_round(&sim_id, &summary) {
                tracing::warn!(error = %e, "cannot post round to hub");
            }
        }
    })?;
    export_results(&results, &args.out).map_err(|e| SimError::Runtime(e.to_string()))?;
    println!("results written to {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    agentsim::init_tracing();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ SimError::Config(_)) => {
            eprintln!("simrun: {e}");
            ExitCode::from(2)
        }
        Err(e @ SimError::Runtime(_)) => {
            eprintln!("simrun: {e}");
            ExitCode::from(3)
        }
    }
}
