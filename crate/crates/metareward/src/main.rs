use clap::{Args, Parser, Subcommand};
use metareward::commands::{pool_for, run_evaluate, run_meta_train, run_report, run_rl2_train, EvalRequest};
use metareward::{Error, Result, RunConfig};
use metareward_core::env::Split;
use metareward_core::eval::{EvalProtocol, Method};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "metareward", version, about = "Meta-learned training signals for PPO on toy task distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single override, repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root of the output tree.
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    #[arg(long)]
    benchmark: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_parser = ["train", "test", "both"], default_value = "both")]
    split: String,
    /// Comma-separated seeds; defaults to the protocol's seed count.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    runs_per_task: Option<usize>,
    /// Write a binary log and CSV summary of every evaluated lifetime here.
    #[arg(long, value_name = "DIR")]
    dump_lifetime: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a signal generator for one seed.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["intrinsic", "advantage"])]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_updates: Option<usize>,
    },
    /// Evaluate a method on a task split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["intrinsic", "advantage", "rl2", "shaped", "sparse"])]
        method: String,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Train RL² or evaluate the extrinsic-reward PPO baselines.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["rl2", "shaped", "sparse"])]
        method: String,
        #[arg(long)]
        max_updates: Option<usize>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Aggregate evaluation CSVs into curves and charts.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Core(metareward_core::Error::config(format!("--set expects KEY=VALUE, got `{kv}`"))))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(b) = &common.benchmark {
        cfg.set("benchmark", b)?;
    }
    Ok(cfg)
}

fn splits(s: &str) -> Vec<Split> {
    match s {
        "train" => vec![Split::Train],
        "test" => vec![Split::Test],
        _ => vec![Split::Train, Split::Test],
    }
}

fn evaluate(cfg: &RunConfig, common: &Common, method: Method, args: &EvalArgs) -> Result<()> {
    let pool = pool_for(cfg)?;
    let mut protocol = EvalProtocol::default();
    if let Some(r) = args.runs_per_task {
        protocol.runs_per_task = r;
    }
    for split in splits(&args.split) {
        let mut req = EvalRequest::new(method, split, protocol.clone());
        if !args.seeds.is_empty() {
            req.seeds = args.seeds.clone();
        }
        req.dump_lifetimes = args.dump_lifetime.clone();
        for e in run_evaluate(cfg, &req, &common.runs, &pool)? {
            println!("{} {} seed {}: final success {:.3}", method.id(), split.id(), e.seed, e.final_success);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MetaTrain { common, mode, seed, max_updates } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = mode {
                cfg.set("mode", &m)?;
            }
            if let Some(s) = seed {
                cfg.set("seed", &s.to_string())?;
            }
            if let Some(u) = max_updates {
                cfg.set("max_outer_updates", &u.to_string())?;
            }
            let pool = pool_for(&cfg)?;
            let r = run_meta_train(&cfg, &common.runs, &pool, |row| {
                eprintln!(
                    "update {:>4}  lifetime return {:>9.4}  validation {:>8.4}  success {:.3}  kl {:.4}",
                    row.update, row.mean_lifetime_return, row.validation_return, row.mean_final_success, row.stats.approx_kl
                );
            })?;
            println!("stopped after {} outer updates ({:?})", r.log.len(), r.stop);
        }
        Command::Evaluate { common, method, eval } => {
            let cfg = load_config(&common)?;
            evaluate(&cfg, &common, Method::parse(&method)?, &eval)?;
        }
        Command::Baseline { common, method, max_updates, eval } => {
            let mut cfg = load_config(&common)?;
            let method = Method::parse(&method)?;
            if method == Method::Rl2 {
                if let Some(u) = max_updates {
                    cfg.set("max_outer_updates", &u.to_string())?;
                }
                let pool = pool_for(&cfg)?;
                let seeds = if eval.seeds.is_empty() { vec![cfg.seed()] } else { eval.seeds.clone() };
                for s in seeds {
                    cfg.set("seed", &s.to_string())?;
                    let r = run_rl2_train(&cfg, &common.runs, &pool, |u, v, succ| {
                        eprintln!("rl2 seed {s} update {u:>4}  validation {v:>8.4}  success {succ:.3}");
                    })?;
                    println!("rl2 seed {s}: stopped after {} outer updates ({:?})", r.log.len(), r.stop);
                }
            } else {
                evaluate(&cfg, &common, method, &eval)?;
            }
        }
        Command::Report { common, out } => {
            let cfg = load_config(&common)?;
            let (curves, files) = run_report(&cfg, &common.runs, &out)?;
            for c in &curves {
                println!("{} {}: final success {:.3} ± {:.3} over {} seeds", c.method.id(), c.split.id(), c.final_mean, c.final_std, c.seeds);
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
