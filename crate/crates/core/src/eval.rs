//! Evaluation protocol and aggregation across seeds.
//!
//! Every task of a split is run `runs_per_task` times from scratch. The unit
//! is per-episode success; curves average it per episode index over tasks
//! and runs, and the final success is that of the deterministic validation
//! episodes. Meta-agents emit the mean of their Gaussian during evaluation.

use crate::baselines::{run_extrinsic_baseline, ExtrinsicReward, Rl2Policy};
use crate::env::{Benchmark, Split, TaskClass, TaskPools};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::inner::{run_lifetime, LifetimeRecord, PpoConfig, SignalMode};
use crate::math;
use crate::meta_agent::{MetaAgent, MetaMode};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Intrinsic,
    Advantage,
    Rl2,
    Shaped,
    Sparse,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Intrinsic, Method::Advantage, Method::Rl2, Method::Shaped, Method::Sparse];

    pub fn id(self) -> &'static str {
        match self {
            Method::Intrinsic => "intrinsic",
            Method::Advantage => "advantage",
            Method::Rl2 => "rl2",
            Method::Shaped => "shaped",
            Method::Sparse => "sparse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::config(format!("unknown method `{s}` (expected intrinsic, advantage, rl2, shaped or sparse)")))
    }

    pub fn is_meta(self) -> bool {
        matches!(self, Method::Intrinsic | Method::Advantage | Method::Rl2)
    }
}

/// Counts of the evaluation protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalProtocol {
    pub runs_per_task: usize,
    pub meta_seeds: usize,
    pub extrinsic_seeds: usize,
    /// Meta-agents emit their mean signal.
    pub deterministic_meta: bool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol { runs_per_task: 10, meta_seeds: 3, extrinsic_seeds: 5, deterministic_meta: true }
    }
}

impl EvalProtocol {
    pub fn seeds_for(&self, method: Method) -> usize {
        if method.is_meta() {
            self.meta_seeds
        } else {
            self.extrinsic_seeds
        }
    }
}

/// What is being evaluated.
pub enum Subject<'a> {
    Meta(&'a MetaAgent),
    Rl2(&'a Rl2Policy),
    Extrinsic(ExtrinsicReward),
}

impl Subject<'_> {
    pub fn method(&self) -> Method {
        match self {
            Subject::Meta(a) if a.mode == MetaMode::Intrinsic => Method::Intrinsic,
            Subject::Meta(_) => Method::Advantage,
            Subject::Rl2(_) => Method::Rl2,
            Subject::Extrinsic(ExtrinsicReward::Shaped) => Method::Shaped,
            Subject::Extrinsic(ExtrinsicReward::Sparse) => Method::Sparse,
        }
    }
}

/// Result for one task, averaged over its runs.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskResult {
    pub class: TaskClass,
    pub index: usize,
    pub final_success: f64,
    pub per_episode: Vec<f64>,
}

/// One seed's evaluation of one method on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedEval {
    pub method: Method,
    pub split: Split,
    pub seed: u64,
    /// Mean success per episode index.
    pub per_episode: Vec<f64>,
    pub final_success: f64,
    pub tasks: Vec<TaskResult>,
}

/// Runs every task of `split` `protocol.runs_per_task` times.
///
/// The task pools are those of `seed`; lifetime `r` of task `i` draws its
/// randomness from the stream family `eval/{split}/{i}/{r}`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<E: Executor>(
    subject: &Subject,
    benchmark: Benchmark,
    split: Split,
    seed: u64,
    protocol: &EvalProtocol,
    inner: &PpoConfig,
    k: usize,
    exec: &E,
) -> Result<SeedEval> {
    Ok(evaluate_with_records(subject, benchmark, split, seed, protocol, inner, k, exec)?.0)
}

/// [`evaluate`] that also returns every lifetime, task-major.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with_records<E: Executor>(
    subject: &Subject,
    benchmark: Benchmark,
    split: Split,
    seed: u64,
    protocol: &EvalProtocol,
    inner: &PpoConfig,
    k: usize,
    exec: &E,
) -> Result<(SeedEval, Vec<LifetimeRecord>)> {
    if protocol.runs_per_task == 0 {
        return Err(Error::config("runs_per_task must be positive"));
    }
    let tasks = TaskPools::build(benchmark, seed).tasks(split);
    let root = crate::rng::SeedTree::new(seed).child(&format!("eval/{}", split.id()));
    let runs = protocol.runs_per_task;
    let records: Vec<LifetimeRecord> = match subject {
        Subject::Extrinsic(r) => run_extrinsic_baseline(&tasks, *r, inner, runs, &root, exec)?,
        Subject::Meta(agent) => {
            let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..runs).map(move |r| (t, r))).collect();
            exec.map(&jobs, |_, &(t, r)| {
                let tree = root.child(&format!("task/{t}/run/{r}"));
                let mut session = agent.session(protocol.deterministic_meta, k, tree.stream("meta"));
                let mut mode = match agent.mode {
                    MetaMode::Intrinsic => SignalMode::MetaIntrinsic(&mut session),
                    MetaMode::Advantage => SignalMode::MetaAdvantage(&mut session),
                };
                run_lifetime(&tasks[t], &mut mode, inner, &tree)
            })?
        }
        Subject::Rl2(policy) => {
            let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..runs).map(move |r| (t, r))).collect();
            exec.map(&jobs, |_, &(t, r)| Ok(policy.run_lifetime(&tasks[t], inner, k, &root.child(&format!("task/{t}/run/{r}")))?.0))?
        }
    };
    let results: Vec<TaskResult> = tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let rs = &records[i * runs..(i + 1) * runs];
            TaskResult {
                class: task.class,
                index: task.index,
                final_success: rs.iter().map(|r| r.final_success()).sum::<f64>() / runs as f64,
                per_episode: mean_columns(rs.iter().map(|r| r.success_per_episode().iter().map(|s| *s as u8 as f64).collect())),
            }
        })
        .collect();
    let eval = SeedEval {
        method: subject.method(),
        split,
        seed,
        per_episode: mean_columns(results.iter().map(|t| t.per_episode.clone())),
        final_success: results.iter().map(|t| t.final_success).sum::<f64>() / results.len().max(1) as f64,
        tasks: results,
    };
    Ok((eval, records))
}

fn mean_columns(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for r in rows {
        if sum.is_empty() {
            sum = vec![0.0; r.len()];
        }
        for (s, v) in sum.iter_mut().zip(&r) {
            *s += v;
        }
        n += 1;
    }
    sum.iter().map(|s| s / n.max(1) as f64).collect()
}

/// Mean and population std across seeds of one method on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct SuccessCurve {
    pub method: Method,
    pub split: Split,
    pub seeds: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, math::sqrt(v))
}

/// Folds per-seed evaluations of the same method and split.
pub fn aggregate(evals: &[SeedEval]) -> Result<SuccessCurve> {
    let first = evals.first().ok_or_else(|| Error::usage("nothing to aggregate"))?;
    if evals.iter().any(|e| e.method != first.method || e.split != first.split || e.per_episode.len() != first.per_episode.len()) {
        return Err(Error::usage("aggregated evaluations must share method, split and lifetime length"));
    }
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for i in 0..first.per_episode.len() {
        let col: Vec<f64> = evals.iter().map(|e| e.per_episode[i]).collect();
        let (m, s) = mean_std(&col);
        mean.push(m);
        std.push(s);
    }
    let finals: Vec<f64> = evals.iter().map(|e| e.final_success).collect();
    let (final_mean, final_std) = mean_std(&finals);
    Ok(SuccessCurve { method: first.method, split: first.split, seeds: evals.len(), mean, std, final_mean, final_std })
}

/// A label such as `intrinsic/test`.
pub fn curve_label(c: &SuccessCurve) -> String {
    format!("{}/{}", c.method.id(), c.split.id())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;

    fn fake(method: Method, seed: u64, per: Vec<f64>, fin: f64) -> SeedEval {
        SeedEval { method, split: Split::Test, seed, per_episode: per, final_success: fin, tasks: vec![] }
    }

    #[test]
    fn aggregation_matches_hand_arithmetic() {
        let e = [
            fake(Method::Intrinsic, 0, vec![0.0, 0.5], 0.2),
            fake(Method::Intrinsic, 1, vec![0.5, 0.5], 0.4),
            fake(Method::Intrinsic, 2, vec![1.0, 0.5], 0.9),
        ];
        let c = aggregate(&e).unwrap();
        assert_eq!(c.mean, vec![0.5, 0.5]);
        assert!((c.std[0] - libm::sqrt(1.0 / 6.0)).abs() < 1e-15);
        assert_eq!(c.std[1], 0.0);
        assert!((c.final_mean - 0.5).abs() < 1e-15);
        let one = aggregate(&e[..1]).unwrap();
        assert!(one.std.iter().all(|s| *s == 0.0) && one.final_std == 0.0);
        let mut mixed = e.to_vec();
        mixed[1].method = Method::Sparse;
        assert!(aggregate(&mixed).is_err());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregation_ignores_seed_order() {
        let e = [fake(Method::Sparse, 0, vec![0.1, 0.3], 0.1), fake(Method::Sparse, 1, vec![0.7, 0.2], 0.3)];
        let r = [e[1].clone(), e[0].clone()];
        assert_eq!(aggregate(&e).unwrap(), aggregate(&r).unwrap());
    }

    #[test]
    fn method_ids_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.id()).unwrap(), m);
        }
        assert!(matches!(Method::parse("maml"), Err(Error::Config(_))));
    }

    #[test]
    fn evaluation_counts_and_reproducibility() {
        let inner = PpoConfig {
            num_steps: 20,
            learning_steps: 20,
            horizon: 10,
            update_epochs: 1,
            num_minibatches: 2,
            hidden: 8,
            ..PpoConfig::default()
        };
        let protocol = EvalProtocol { runs_per_task: 2, ..EvalProtocol::default() };
        let s = Subject::Extrinsic(ExtrinsicReward::Sparse);
        let a = evaluate(&s, Benchmark::Ml1Reach, Split::Test, 4, &protocol, &inner, 10, &Sequential).unwrap();
        assert_eq!(a.tasks.len(), 50);
        assert_eq!(a.per_episode.len(), inner.lifetime_steps() / inner.horizon);
        assert!(a.per_episode.iter().all(|v| (0.0..=1.0).contains(v)));
        let b = evaluate(&s, Benchmark::Ml1Reach, Split::Test, 4, &protocol, &inner, 10, &Sequential).unwrap();
        assert_eq!(a, b);
    }
}
