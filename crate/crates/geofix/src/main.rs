use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use geofix::config::PipelineConfig;
use geofix::diag::Diagnostics;
use geofix::pipeline::IPS_FILE;
use geofix::synth_cmd::{DISPLACED_FILE, WORLD_FILE};
use geofix::{fetch, pipeline, score_cmd, synth_cmd, Error, Result};

/// Find IPs whose database geolocation contradicts traceroute latencies, and correct them.
#[derive(Parser)]
#[command(name = "geofix", version)]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for synthetic worlds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze traceroutes against a geolocation snapshot.
    Run {
        /// Traceroutes, RIPE Atlas or native JSON lines.
        #[arg(long)]
        traceroutes: Option<PathBuf>,
        /// Geolocation snapshot CSV.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// City catalog CSV; the built-in catalog otherwise.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Generate a synthetic world, its traceroutes and a corrupted snapshot.
    Synth {
        #[arg(long)]
        routers: Option<usize>,
        #[arg(long)]
        cities: Option<usize>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        mpls_fraction: Option<f64>,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Score a run's output against a synthetic world.
    Score {
        /// Directory holding the run's ips.jsonl.
        #[arg(long)]
        run: PathBuf,
        /// Directory holding world.json and displaced.json.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Look up every traceroute hop in the configured geolocation services.
    FetchGeo {
        #[arg(long)]
        traceroutes: Option<PathBuf>,
        /// Response cache; `<out>/cache` by default.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli, diag: &Diagnostics) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let set = |slot: &mut Option<PathBuf>, v: Option<PathBuf>| {
        if v.is_some() {
            *slot = v;
        }
    };
    match cli.command {
        Command::Run { traceroutes, snapshot, catalog } => {
            set(&mut cfg.traceroutes, traceroutes);
            set(&mut cfg.snapshot, snapshot);
            set(&mut cfg.catalog, catalog);
            println!("{}", pipeline::run(&cfg, diag)?);
        }
        Command::Synth { routers, cities, paths, mpls_fraction, catalog } => {
            let y = &mut cfg.synth;
            y.n_routers = routers.unwrap_or(y.n_routers);
            y.n_cities = cities.unwrap_or(y.n_cities);
            y.n_paths = paths.unwrap_or(y.n_paths);
            y.mpls_fraction = mpls_fraction.unwrap_or(y.mpls_fraction);
            set(&mut cfg.catalog, catalog);
            println!("{}", synth_cmd::synth(&cfg, diag)?);
        }
        Command::Score { run, truth } => {
            let out = cfg.out.clone().unwrap_or_else(|| run.clone());
            let report =
                score_cmd::score(&run.join(IPS_FILE), &truth.join(WORLD_FILE), &truth.join(DISPLACED_FILE), &out)?;
            for (k, v) in score_cmd::score_rows(&report) {
                println!("{k}: {v}");
            }
        }
        Command::FetchGeo { traceroutes, cache_dir } => {
            set(&mut cfg.traceroutes, traceroutes);
            set(&mut cfg.cache_dir, cache_dir);
            let report = fetch::fetch_cmd(&cfg, diag)?;
            for (name, s) in &report.per_source {
                println!("{name}: {} cached, {} requested, {} failed", s.cached, s.requested, s.failed);
            }
            println!("ips with records: {}", report.snapshot.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let diag = Diagnostics::default();
    let result = execute(cli, &diag);
    diag.finish();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
