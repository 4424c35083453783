use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cbfmeta::harness::{self, RunConfig};
use cbfmeta::sim::BackendKind;
use cbfmeta::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "cbfmeta", version, about = "Meta-learned control barrier functions from simulated LiDAR")]
struct Cli {
    /// JSON run configuration; omitted sections take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Artifact directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,

    /// Restricts `simulate` to one backend (both by default).
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,

    /// Reduced budgets: 2000 meta iterations, 30 NLL tasks, Δ_lidar = 5 s.
    #[arg(long, global = true)]
    desk_scale: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Meta-train and write checkpoint.bin and train_log.csv.
    MetaTrain,
    /// NLL and adaptation time against data count (needs a checkpoint).
    EvalNll,
    /// Closed-loop episodes over scenes and LiDAR periods (needs a checkpoint).
    Simulate,
    /// Aggregate episode summaries into cse_table.csv.
    Report,
    /// meta-train, eval-nll, simulate and report in sequence.
    Pipeline,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BackendArg {
    Meta,
    Gp,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Meta => BackendKind::Meta,
            BackendArg::Gp => BackendKind::Gp,
        }
    }
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.desk_scale {
        cfg = cfg.desk_scale();
    }
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("CBFMETA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Error::ConfigInvalid(format!("CBFMETA_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::ConfigInvalid(format!("cannot size thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    let out = &cli.out;
    let backends: Vec<BackendKind> = match cli.backend {
        Some(b) => vec![b.into()],
        None => vec![BackendKind::Meta, BackendKind::Gp],
    };
    match cli.command {
        Command::Report => {
            let rows = harness::cmd_report(out)?;
            log::info!("wrote {} rows to {}", rows.len(), out.join(harness::CSE_TABLE).display());
        }
        Command::MetaTrain => {
            harness::cmd_meta_train(&config(cli)?, out)?;
        }
        Command::EvalNll => {
            let cfg = config(cli)?;
            harness::cmd_eval_nll(&cfg, &harness::load_checkpoint(out)?, out)?;
        }
        Command::Simulate => {
            let cfg = config(cli)?;
            harness::cmd_simulate(&cfg, &harness::load_checkpoint(out)?, &backends, out)?;
        }
        Command::Pipeline => {
            let cfg = config(cli)?;
            let params = harness::cmd_meta_train(&cfg, out)?;
            harness::cmd_eval_nll(&cfg, &params, out)?;
            harness::cmd_simulate(&cfg, &params, &backends, out)?;
            harness::cmd_report(out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(2)
        }
    }
}
