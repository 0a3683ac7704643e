use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pop_cli::commands::{execute, rerun, CommandKind};
use pop_cli::kv::{parse_assignment, read_config, Pairs};
use pop_cli::{exit_code, EXIT_ARTIFACT, OUTPUT_ROOT_ENV};
use pop_core::{PopError, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "pop", version, about = "Train and evaluate learned step-size policies")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file; repeatable, later files win.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Override one setting (key=value); applied after config files.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Outputs are bit-reproducible at 1 worker.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory (default: $POP_OUTPUT_ROOT/<command>-seed<seed>, or runs/...).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy with PPO.
    Train {
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a checkpoint and the baselines on held-out prior tasks.
    EvalPrior {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and the baselines on the benchmark catalog.
    EvalBench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Grid-search the learning rate of gd, adam or lbfgs.
    SweepLr {
        #[arg(long)]
        method: Option<String>,
    },
    /// Export 2-D prior samples as grid surfaces.
    SamplePrior {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Re-execute a run from its manifest with one worker and compare outputs.
    Rerun { manifest: PathBuf },
}

fn settings(common: &Common, extra: Vec<(String, String)>) -> Result<Pairs> {
    let mut pairs = Pairs::new();
    for path in &common.config {
        pairs.extend(read_config(path)?);
    }
    for s in &common.set {
        pairs.push(parse_assignment(s)?);
    }
    pairs.extend(extra);
    if let Some(seed) = common.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    Ok(pairs)
}

fn default_out(command: &str, pairs: &Pairs) -> PathBuf {
    let seed = pairs.iter().rev().find(|(k, _)| k == "seed").map(|(_, v)| v.as_str()).unwrap_or("0");
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{command}-seed{seed}"))
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn run(cli: Cli) -> Result<i32> {
    let (kind, extra) = match cli.command {
        Cmd::Train { iterations } => {
            (CommandKind::Train, iterations.map(|n| ("iterations".into(), n.to_string())).into_iter().collect())
        }
        Cmd::EvalPrior { checkpoint } => (
            CommandKind::EvalPrior,
            checkpoint.map(|p| ("checkpoint".to_string(), path_string(&p))).into_iter().collect(),
        ),
        Cmd::EvalBench { checkpoint } => (
            CommandKind::EvalBench,
            checkpoint.map(|p| ("checkpoint".to_string(), path_string(&p))).into_iter().collect(),
        ),
        Cmd::SweepLr { method } => {
            (CommandKind::SweepLr, method.map(|m| ("methods".to_string(), m)).into_iter().collect())
        }
        Cmd::SamplePrior { n } => {
            (CommandKind::SamplePrior, n.map(|n| ("n".to_string(), n.to_string())).into_iter().collect::<Vec<_>>())
        }
        Cmd::Rerun { manifest } => {
            let out = cli.common.out.clone().unwrap_or_else(|| {
                let dir = if manifest.is_dir() {
                    manifest.clone()
                } else {
                    manifest.parent().unwrap_or(Path::new(".")).to_path_buf()
                };
                dir.join("rerun")
            });
            let report = rerun(&manifest, &out)?;
            if report.mismatched.is_empty() {
                eprintln!("rerun: {} outputs identical ({})", report.manifest.outputs.len(), out.display());
                return Ok(0);
            }
            for p in &report.mismatched {
                eprintln!("rerun: output differs: {p}");
            }
            return Ok(EXIT_ARTIFACT);
        }
    };
    let pairs = settings(&cli.common, extra)?;
    let out = cli.common.out.clone().unwrap_or_else(|| default_out(kind.name(), &pairs));
    let manifest = execute(kind, &pairs, &out, cli.common.workers)?;
    eprintln!(
        "{}: wrote {} files to {} in {:.1} s",
        kind.name(),
        manifest.outputs.len(),
        out.display(),
        manifest.wall_clock_seconds
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let e: PopError = e;
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
