use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};

use splitter::backends::ScriptedBackend;
use splitter::clock::SystemClock;
use splitter::config::AppConfig;
use splitter::eval::{self, EvalBackends, EvalOptions};
use splitter::semcache::SemanticCache;
use splitter::telemetry;
use splitter::transport::{build_pipeline, http, mcp};
use splitter::types::TokenUsage;

#[derive(Parser)]
#[command(
    name = "splitter",
    version,
    about = "Local/cloud LLM request-splitting gateway with seven token-reduction tactics"
)]
struct Cli {
    /// Path to the TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gateway: an OpenAI-compatible HTTP proxy, or an MCP stdio
    /// server with --mcp.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// Speak MCP (JSON-RPC 2.0 over stdio) instead of HTTP.
        #[arg(long)]
        mcp: bool,
    },
    /// Run the evaluation matrix and emit results CSV + summary + figure
    /// data.
    Eval {
        /// Subset preset (`core`, `pairs`) or an explicit list like
        /// `baseline,T1,T1+T2,all`.
        #[arg(long, default_value = "core")]
        subsets: String,
        #[arg(long, default_value_t = 2)]
        passes: usize,
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
        /// Directory holding the committed workload JSONL files.
        #[arg(long, default_value = "workloads")]
        workloads: PathBuf,
        /// Comma-separated subset names to quality-judge against baseline
        /// (e.g. `T1,T1+T2`); empty skips the judge pass.
        #[arg(long, default_value = "")]
        judge: String,
    },
    /// Aggregate telemetry across all recorded runs.
    Stats {
        /// Only count events at or after this Unix-millisecond timestamp.
        #[arg(long)]
        since_ms: Option<i64>,
    },
    /// Inspect or clear the semantic cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Export every entry as line-delimited JSON on stdout.
    Dump,
    /// Delete all entries.
    Clear,
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<AppConfig> {
    match path {
        Some(path) => AppConfig::load(path).with_context(|| format!("loading {}", path.display())),
        None => {
            let default_path = PathBuf::from("splitter.toml");
            if default_path.exists() {
                AppConfig::load(&default_path).context("loading splitter.toml")
            } else {
                let mut config = AppConfig::default();
                config.apply_env_overrides(|name| std::env::var(name).ok());
                Ok(config)
            }
        }
    }
}

fn open_cache(config: &AppConfig) -> anyhow::Result<SemanticCache> {
    // embedder is unused for dump/clear; a placeholder keeps the store API uniform
    let embedder = Arc::new(ScriptedBackend::always("n/a", TokenUsage::ZERO));
    Ok(SemanticCache::open(&config.cache.path, embedder, Arc::new(SystemClock))?)
}

fn unix_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "splitter=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let config = load_config(&cli.config)?;

    match cli.command {
        Command::Serve { port, mcp } => {
            let run_id = format!("serve-{}", unix_seconds());
            let pipeline = build_pipeline(&config, run_id).await?;
            if mcp {
                mcp::McpServer::new(pipeline).run_stdio().await?;
            } else {
                let state = Arc::new(http::HttpState {
                    pipeline,
                    auth_token: config.server.auth_token.clone(),
                });
                http::serve(state, port.unwrap_or(config.server.port)).await?;
            }
        }
        Command::Eval { subsets, passes, out, workloads, judge } => {
            let specs = eval::subsets::preset(&subsets)
                .map(Ok)
                .unwrap_or_else(|| eval::subsets::parse_subset_list(&subsets))
                .context("parsing --subsets")?;
            let loaded = eval::load_all(&workloads)
                .with_context(|| format!("loading workloads from {}", workloads.display()))?;
            let all_mock = [
                &config.backends.local,
                &config.backends.cloud,
                &config.backends.embedding,
            ]
            .iter()
            .all(|b| b.kind == splitter::config::BackendKind::ScriptedMock);
            let backends = if all_mock {
                EvalBackends::Scripted
            } else {
                EvalBackends::Live(Box::new(config.backends.clone()))
            };
            let options = EvalOptions {
                passes,
                out_dir: out,
                subsets: specs,
                rates: config.rates,
                tactic_defaults: config.tactics.clone(),
                backends,
                judge_subsets: judge
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            };
            let report = eval::run_eval(&loaded, &options).await?;
            println!(
                "eval complete: {} runs -> {} / {}",
                report.results.len(),
                report.csv_path.display(),
                report.summary_path.display(),
            );
            for path in report.figure_paths {
                println!("figure data: {}", path.display());
            }
            if let Some(path) = report.judgments_path {
                println!("judgments: {}", path.display());
            }
        }
        Command::Stats { since_ms } => {
            let runs_dir = config.server.state_dir.join("runs");
            let mut events = Vec::new();
            let mut skipped = 0usize;
            if runs_dir.is_dir() {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(&runs_dir)?
                    .filter_map(|entry| entry.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
                    .collect();
                paths.sort();
                for path in paths {
                    let (mut parsed, bad) = telemetry::read_events(&path)?;
                    events.append(&mut parsed);
                    skipped += bad;
                }
            }
            let report = telemetry::stats(&events, since_ms, skipped);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Cache { action } => {
            let cache = open_cache(&config)?;
            match action {
                CacheAction::Dump => {
                    for entry in cache.dump()? {
                        println!("{}", serde_json::to_string(&entry)?);
                    }
                }
                CacheAction::Clear => {
                    let removed = cache.clear()?;
                    println!("removed {removed} cache entries");
                }
            }
        }
    }
    Ok(())
}
