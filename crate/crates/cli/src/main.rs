//! `hbl`: command-line driver for the Hebbian-learning Hopfield laboratory.
//!
//! Every command writes its artifacts and a `<command>-summary.json` run
//! summary into `--out`. Exit codes: 0 success, 2 usage or configuration
//! error, 3 numerical failure.

mod commands;
mod config;
mod svg;

use clap::{Parser, Subcommand};
use commands::{Context, Failure, Outcome};
use config::ExperimentConfig;
use serde_json::{json, Map};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hbl",
    version,
    about = "Hopfield network with Hebbian learning: simulation, bifurcations, memories, basins"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration; absent fields take defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Root seed, overriding the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; falls back to HBL_WORKERS, then all cores
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Learning-time window A:B
    #[arg(long, global = true, value_parser = parse_range)]
    t_range: Option<(f64, f64)>,
    /// Trajectory file to read, or for train and demo-n3 to write
    #[arg(long, global = true)]
    snapshot: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate the learning dynamics and store the weight trajectory
    Train,
    /// Track fixed points along a trajectory and detect bifurcations
    Scan,
    /// Basin-of-attraction rasters on planes and through saddles
    Basins,
    /// Memory labels at one time; forgetting log over --t-range
    Memories,
    /// Pitchfork-test crossings and saddle-node manifold sections
    Manifold,
    /// Full small-network (N = 3, g = 5) reproduction bundle
    DemoN3,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Scan => "scan",
            Command::Basins => "basins",
            Command::Memories => "memories",
            Command::Manifold => "manifold",
            Command::DemoN3 => "demo-n3",
        }
    }
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected A:B, got {s:?}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad start {a:?}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad end {b:?}: {e}"))?;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(format!("need finite A < B, got {a}:{b}"));
    }
    Ok((a, b))
}

fn load_config(cli: &Cli) -> Outcome<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn workers(cli: &Cli) -> Outcome<Option<usize>> {
    let n = match cli.workers {
        Some(n) => Some(n),
        None => match std::env::var("HBL_WORKERS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Failure::Usage(format!("HBL_WORKERS must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Failure::Usage("worker count must be positive".into()));
    }
    Ok(n)
}

fn run(cli: &Cli) -> Outcome<Context> {
    let cfg = load_config(cli)?;
    if let Some(n) = workers(cli)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot set worker count: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", cli.out.display())))?;
    let mut ctx = Context {
        cfg,
        out: cli.out.clone(),
        snapshot: cli.snapshot.clone(),
        t_range: cli.t_range,
        outputs: Vec::new(),
        metrics: Map::new(),
    };
    let result = match cli.command {
        Command::Train => commands::train(&mut ctx),
        Command::Scan => commands::scan(&mut ctx),
        Command::Basins => commands::basins(&mut ctx),
        Command::Memories => commands::memories(&mut ctx),
        Command::Manifold => commands::manifold(&mut ctx),
        Command::DemoN3 => commands::demo_n3(&mut ctx),
    };
    match result {
        Ok(()) => Ok(ctx),
        Err(e) => {
            write_summary(cli, &ctx, Some(&e));
            Err(e)
        }
    }
}

fn write_summary(cli: &Cli, ctx: &Context, failure: Option<&Failure>) {
    let name = cli.command.name();
    let mut outputs = ctx.outputs.clone();
    outputs.push(format!("{name}-summary.json"));
    let summary = json!({
        "command": name,
        "status": failure.map_or("ok".to_string(), |f| format!("exit {}", f.exit_code())),
        "error": failure.map(|f| f.to_string()),
        "seed": ctx.cfg.seed,
        "outputs": outputs,
        "metrics": ctx.metrics,
        "config": ctx.cfg,
    });
    let path = cli.out.join(format!("{name}-summary.json"));
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    if let Err(e) = std::fs::write(&path, text) {
        eprintln!("hbl: cannot write {}: {e}", path.display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(ctx) => {
            write_summary(&cli, &ctx, None);
            println!(
                "{}",
                serde_json::to_string(&json!({"command": cli.command.name(), "status": "ok", "metrics": ctx.metrics}))
                    .expect("serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hbl {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
