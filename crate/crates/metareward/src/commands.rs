//! The work behind each subcommand, callable without the argument parser.
//!
//! Output tree under the runs directory:
//!
//! ```text
//! {method}/{benchmark}/seed{N}/checkpoint.{bin,json}, config.cfg, train_log.csv, class_stats.csv
//! eval/{benchmark}/{method}-{split}-seed{N}.csv (+ -tasks.csv)
//! ```

use crate::config::RunConfig;
use crate::container::{load_meta_agent, load_rl2, save_checkpoint, ArchJson, Sidecar};
use crate::error::{Error, Result};
use crate::lifelog::dump_lifetime;
use crate::parallel::{effective_threads, Pool};
use crate::report::{aggregate_all, collect_seed_evals, write_report, write_seed_eval};
use metareward_core::baselines::{train_rl2, ExtrinsicReward, Rl2TrainResult};
use metareward_core::env::{Benchmark, Split};
use metareward_core::eval::{evaluate_with_records, EvalProtocol, Method, SeedEval, Subject, SuccessCurve};
use metareward_core::inner::UpdateStats;
use metareward_core::meta_agent::MetaMode;
use metareward_core::outer::{meta_train, MetaTrainResult, OuterLogRow};
use std::path::{Path, PathBuf};

pub fn method_of(mode: MetaMode) -> Method {
    match mode {
        MetaMode::Intrinsic => Method::Intrinsic,
        MetaMode::Advantage => Method::Advantage,
    }
}

pub fn train_dir(runs: &Path, method: Method, benchmark: Benchmark, seed: u64) -> PathBuf {
    runs.join(method.id()).join(benchmark.id()).join(format!("seed{seed}"))
}

pub fn checkpoint_path(runs: &Path, method: Method, benchmark: Benchmark, seed: u64) -> PathBuf {
    train_dir(runs, method, benchmark, seed).join("checkpoint.bin")
}

pub fn eval_dir(runs: &Path, benchmark: Benchmark) -> PathBuf {
    runs.join("eval").join(benchmark.id())
}

/// Executor honouring the configured thread cap and `METAREWARD_THREADS`.
pub fn pool_for(cfg: &RunConfig) -> Result<Pool> {
    Ok(Pool::new(effective_threads(cfg.threads())?))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_file(path: &Path, hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(format!("# config_hash={hash}\n").into_bytes());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write(path, &bytes)
}

const STATS_HEADER: [&str; 7] = ["pg_loss", "v_loss", "entropy", "approx_kl", "clip_frac", "epochs_run", "early_stopped"];

fn stats_cells(s: &UpdateStats) -> Vec<String> {
    vec![
        format!("{}", s.pg_loss),
        format!("{}", s.v_loss),
        format!("{}", s.entropy),
        format!("{}", s.approx_kl),
        format!("{}", s.clip_frac),
        s.epochs_run.to_string(),
        (s.early_stopped as u8).to_string(),
    ]
}

fn outer_rows(log: &[OuterLogRow]) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for r in log {
        let mut row = vec![
            r.update.to_string(),
            r.env_steps.to_string(),
            format!("{}", r.mean_lifetime_return),
            format!("{}", r.validation_return),
            format!("{}", r.mean_final_success),
        ];
        row.extend(stats_cells(&r.stats));
        rows.push(row);
        for (c, mean, norm) in &r.class_stats {
            classes.push(vec![r.update.to_string(), c.id().to_string(), format!("{mean}"), format!("{norm}")]);
        }
    }
    (rows, classes)
}

/// Meta-trains one seed, rewriting the log and checkpoint after every
/// outer update. `progress` sees each log row as it is produced.
pub fn run_meta_train(cfg: &RunConfig, runs: &Path, exec: &Pool, mut progress: impl FnMut(&OuterLogRow)) -> Result<MetaTrainResult> {
    let mt = cfg.meta_train()?;
    let method = method_of(mt.mode);
    let dir = train_dir(runs, method, mt.benchmark, mt.seed);
    let hash = cfg.hash();
    write(&dir.join("config.cfg"), cfg.serialize().as_bytes())?;
    let mut log: Vec<OuterLogRow> = Vec::new();
    let mut header = vec!["update", "env_steps", "mean_lifetime_return", "validation_return", "mean_final_success"];
    header.extend(STATS_HEADER);
    let side = |updates: usize| Sidecar {
        method: mt.mode.id().to_string(),
        benchmark: mt.benchmark.id().to_string(),
        seed: mt.seed,
        out_range: mt.mode.range(),
        initial_std: mt.initial_std,
        arch: ArchJson::from(&mt.arch),
        config_hash: hash.clone(),
        outer_updates: updates,
    };
    let mut io_err: Option<Error> = None;
    let result = meta_train(&mt, exec, |row, agent| {
        log.push(row.clone());
        progress(row);
        let (rows, classes) = outer_rows(&log);
        let saved = csv_file(&dir.join("train_log.csv"), &hash, &header, &rows)
            .and_then(|_| csv_file(&dir.join("class_stats.csv"), &hash, &["update", "class", "running_mean", "normalized_mean"], &classes))
            .and_then(|_| save_checkpoint(&dir.join("checkpoint.bin"), &agent.params, &side(log.len())));
        if let Err(e) = saved {
            let msg = e.to_string();
            io_err = Some(e);
            return Err(metareward_core::Error::usage(msg));
        }
        Ok(())
    });
    match (result, io_err) {
        (_, Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
        (Ok(r), None) => {
            save_checkpoint(&dir.join("checkpoint.bin"), &r.agent.params, &side(r.log.len()))?;
            Ok(r)
        }
    }
}

/// Meta-trains the RL² baseline for one seed.
pub fn run_rl2_train(cfg: &RunConfig, runs: &Path, exec: &Pool, mut progress: impl FnMut(usize, f64, f64)) -> Result<Rl2TrainResult> {
    let rc = cfg.rl2()?;
    let dir = train_dir(runs, Method::Rl2, rc.benchmark, rc.seed);
    let hash = cfg.hash();
    write(&dir.join("config.cfg"), cfg.serialize().as_bytes())?;
    let mut header = vec!["update", "validation_return", "mean_final_success"];
    header.extend(STATS_HEADER);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let result = train_rl2(&rc, exec, |row, _| {
        progress(row.update, row.validation_return, row.mean_final_success);
        let mut r = vec![row.update.to_string(), format!("{}", row.validation_return), format!("{}", row.mean_final_success)];
        r.extend(stats_cells(&row.stats));
        rows.push(r);
        Ok(())
    })?;
    csv_file(&dir.join("train_log.csv"), &hash, &header, &rows)?;
    let side = Sidecar {
        method: Method::Rl2.id().to_string(),
        benchmark: rc.benchmark.id().to_string(),
        seed: rc.seed,
        out_range: 1.0,
        initial_std: rc.initial_std,
        arch: ArchJson::from(&rc.arch),
        config_hash: hash,
        outer_updates: result.log.len(),
    };
    save_checkpoint(&dir.join("checkpoint.bin"), &result.policy.params, &side)?;
    Ok(result)
}

/// Evaluation request for one method on one split.
#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub method: Method,
    pub split: Split,
    /// Training seeds for meta methods, run seeds for extrinsic ones.
    pub seeds: Vec<u64>,
    pub protocol: EvalProtocol,
    /// Directory for per-lifetime logs, if any.
    pub dump_lifetimes: Option<PathBuf>,
}

impl EvalRequest {
    pub fn new(method: Method, split: Split, protocol: EvalProtocol) -> Self {
        let seeds = (0..protocol.seeds_for(method) as u64).collect();
        EvalRequest { method, split, seeds, protocol, dump_lifetimes: None }
    }
}

/// Evaluates every requested seed and writes one CSV pair per seed.
pub fn run_evaluate(cfg: &RunConfig, req: &EvalRequest, runs: &Path, exec: &Pool) -> Result<Vec<SeedEval>> {
    let benchmark = cfg.benchmark()?;
    let inner = cfg.inner()?;
    let k = cfg.meta_ppo()?.k;
    let hash = cfg.hash();
    let out = eval_dir(runs, benchmark);
    let mut evals = Vec::new();
    for &seed in &req.seeds {
        let (eval, records) = match req.method {
            Method::Intrinsic | Method::Advantage => {
                let path = checkpoint_path(runs, req.method, benchmark, seed);
                let (agent, side) = load_meta_agent(&path)?;
                if method_of(agent.mode) != req.method || side.benchmark != benchmark.id() {
                    return Err(Error::format(&path, format!("checkpoint is for {} on {}", side.method, side.benchmark)));
                }
                evaluate_with_records(&Subject::Meta(&agent), benchmark, req.split, seed, &req.protocol, &inner, k, exec)?
            }
            Method::Rl2 => {
                let path = checkpoint_path(runs, Method::Rl2, benchmark, seed);
                let (policy, _) = load_rl2(&path)?;
                evaluate_with_records(&Subject::Rl2(&policy), benchmark, req.split, seed, &req.protocol, &inner, k, exec)?
            }
            Method::Shaped => {
                evaluate_with_records(&Subject::Extrinsic(ExtrinsicReward::Shaped), benchmark, req.split, seed, &req.protocol, &inner, k, exec)?
            }
            Method::Sparse => {
                evaluate_with_records(&Subject::Extrinsic(ExtrinsicReward::Sparse), benchmark, req.split, seed, &req.protocol, &inner, k, exec)?
            }
        };
        write_seed_eval(&out, &eval, &hash)?;
        if let Some(dir) = &req.dump_lifetimes {
            let dir = dir.join(format!("{}-{}-seed{seed}", req.method.id(), req.split.id()));
            let runs_per_task = req.protocol.runs_per_task;
            for (i, rec) in records.iter().enumerate() {
                dump_lifetime(&dir, &format!("task{:03}-run{:02}", i / runs_per_task, i % runs_per_task), rec, &hash)?;
            }
        }
        evals.push(eval);
    }
    Ok(evals)
}

/// Aggregates every evaluation CSV under `eval/{benchmark}` into `out`.
pub fn run_report(cfg: &RunConfig, runs: &Path, out: &Path) -> Result<(Vec<SuccessCurve>, Vec<PathBuf>)> {
    let evals = collect_seed_evals(&eval_dir(runs, cfg.benchmark()?))?;
    let curves = aggregate_all(&evals)?;
    let files = write_report(out, &curves, &cfg.hash())?;
    Ok((curves, files))
}
