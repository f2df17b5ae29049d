//! Reference comparators: PPO on extrinsic rewards, and RL².
//!
//! The RL² policy is a recurrent network acting directly in the environment
//! for a whole lifetime, with the previous action, previous sparse reward and
//! an episode-start flag as extra inputs. It is trained with the same
//! truncated-window PPO as the meta-agent, on normalised shaped rewards with
//! step-level GAE over the lifetime.

use crate::env::{self, Benchmark, Split, TaskPools, TaskSpec, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::graph::Graph;
use crate::inner::{compute_gae, run_lifetime, EpisodeSummary, LifetimeRecord, PpoConfig, SignalMode, Transition, UpdateStats};
use crate::math;
use crate::meta_agent::RecurrentArch;
use crate::nn::LstmState;
use crate::optim::AdamState;
use crate::outer::{recurrent_ppo_update, MetaPpoConfig, PlateauTracker, RecurrentPpoConfig, RewardNormalizer, SequenceData, StopReason};
use crate::recurrent::{flatten_state, RecurrentNet};
use crate::rng::{normal, Rng, SeedTree};
use crate::tensor::{ParamSet, Tensor};
use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

/// Which environment reward drives an extrinsic baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtrinsicReward {
    Shaped,
    Sparse,
}

impl ExtrinsicReward {
    pub fn id(self) -> &'static str {
        match self {
            ExtrinsicReward::Shaped => "shaped",
            ExtrinsicReward::Sparse => "sparse",
        }
    }
}

/// One lifetime of plain PPO per task, `runs` times each, in task-major order.
pub fn run_extrinsic_baseline<E: Executor>(
    tasks: &[TaskSpec],
    reward: ExtrinsicReward,
    cfg: &PpoConfig,
    runs: usize,
    seeds: &SeedTree,
    exec: &E,
) -> Result<Vec<LifetimeRecord>> {
    let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..runs).map(move |r| (t, r))).collect();
    exec.map(&jobs, |_, &(t, r)| {
        let mut mode = match reward {
            ExtrinsicReward::Shaped => SignalMode::ShapedExtrinsic,
            ExtrinsicReward::Sparse => SignalMode::SparseExtrinsic,
        };
        run_lifetime(&tasks[t], &mut mode, cfg, &seeds.child(&format!("task/{t}/run/{r}")))
    })
}

pub const RL2_VEC_DIM: usize = OBS_DIM + ACT_DIM;
pub const RL2_SCALARS: usize = 2;

/// Recurrent policy of the RL² baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct Rl2Policy {
    pub net: RecurrentNet,
    pub params: ParamSet,
}

/// Per-step record of an RL² lifetime, aligned with its transitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rl2Trace {
    pub vec_in: Vec<f64>,
    pub scalars: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub deterministic: Vec<bool>,
    pub checkpoints: Vec<Vec<f64>>,
    pub checkpoint_every: usize,
}

impl Rl2Policy {
    pub fn new(arch: &RecurrentArch, initial_std: f64, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let spec = arch.spec(RL2_VEC_DIM, RL2_SCALARS, ACT_DIM, 1.0, initial_std);
        let net = RecurrentNet::new(spec, &mut params, "rl2", rng)?;
        Ok(Rl2Policy { net, params })
    }

    /// Action distribution parameters and value for one step.
    pub fn step(&self, obs: &[f64], prev_action: &[f64], prev_reward: f64, episode_start: bool, state: &LstmState) -> Result<Rl2Step> {
        let (v, s) = rl2_features(obs, prev_action, prev_reward, episode_start);
        let (_, _, out) = self.net.step_values(&self.params, &v, &s, state)?;
        Ok(Rl2Step { mean: out.mean, log_std: out.log_std, value: out.value, state: out.state })
    }

    /// Plays one lifetime: `cfg.learning_steps` steps plus the validation
    /// episodes, the last `cfg.validation_deterministic` of them with the
    /// mean action. The recurrent state is never reset.
    pub fn run_lifetime(&self, task: &TaskSpec, cfg: &PpoConfig, checkpoint_every: usize, seeds: &SeedTree) -> Result<(LifetimeRecord, Rl2Trace)> {
        cfg.validate()?;
        let mut env_rng = seeds.stream("env");
        let mut act_rng = seeds.stream("act");
        let (mut st, mut obs) = env::reset(task, cfg.horizon, &mut env_rng);
        let every = checkpoint_every.max(1);
        let mut trace = Rl2Trace { checkpoint_every: every, ..Rl2Trace::default() };
        let mut record = LifetimeRecord {
            task: *task,
            horizon: cfg.horizon,
            learning_steps: cfg.learning_steps,
            transitions: Vec::with_capacity(cfg.lifetime_steps()),
            update_boundaries: Vec::new(),
            episodes: Vec::new(),
            meta: None,
            update_stats: Vec::new(),
        };
        let mut lstm = LstmState::zeros(self.net.spec.hidden);
        let (mut prev_action, mut prev_reward) = ([0.0; ACT_DIM], 0.0);
        let (mut ep_sparse, mut ep_shaped) = (0.0, 0.0);
        let total = cfg.lifetime_steps();
        let det_from = total - cfg.validation_deterministic * cfg.horizon;
        for t in 0..total {
            if t % every == 0 {
                trace.checkpoints.push(flatten_state(&lstm));
            }
            let episode_start = st.t == 0;
            let deterministic = t >= det_from;
            let (v, s) = rl2_features(&obs, &prev_action, prev_reward, episode_start);
            let (mut g, nodes, out) = self.net.step_values(&self.params, &v, &s, &lstm)?;
            let mut action = [0.0; ACT_DIM];
            for (i, a) in action.iter_mut().enumerate() {
                *a = if deterministic { out.mean[i] } else { out.mean[i] + math::exp(out.log_std[i]) * normal(&mut act_rng) };
            }
            let lp = g.gaussian_log_density(nodes.mean, nodes.log_std, Tensor::row_vector(&action));
            let log_prob = g.value(lp).item();
            if !log_prob.is_finite() {
                return Err(Error::numeric("RL² action log-density is not finite"));
            }
            let o = env::step(&mut st, task, &action)?;
            trace.vec_in.extend_from_slice(&v);
            trace.scalars.extend_from_slice(&s);
            trace.actions.extend_from_slice(&action);
            trace.log_probs.push(log_prob);
            trace.values.push(out.value);
            trace.deterministic.push(deterministic);
            let episode = record.episodes.len();
            record.transitions.push(Transition {
                obs,
                action,
                log_prob,
                shaped_reward: o.shaped_reward,
                sparse_reward: o.sparse_reward,
                success: o.success,
                episode,
                episode_start,
                episode_done: o.episode_done,
            });
            ep_sparse += o.sparse_reward;
            ep_shaped += o.shaped_reward;
            lstm = out.state;
            prev_action = action;
            prev_reward = o.sparse_reward;
            if o.episode_done {
                record.episodes.push(EpisodeSummary {
                    index: episode,
                    sparse_return: ep_sparse,
                    shaped_return: ep_shaped,
                    success: st.succeeded,
                    validation: t >= cfg.learning_steps,
                    deterministic,
                });
                ep_sparse = 0.0;
                ep_shaped = 0.0;
                let (s2, o2) = env::reset(task, cfg.horizon, &mut env_rng);
                st = s2;
                obs = o2;
            } else {
                obs = o.observation;
            }
        }
        Ok((record, trace))
    }
}

/// Output of one RL² step.
#[derive(Clone, Debug, PartialEq)]
pub struct Rl2Step {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
    pub state: LstmState,
}

pub fn rl2_features(obs: &[f64], prev_action: &[f64], prev_reward: f64, episode_start: bool) -> (Vec<f64>, Vec<f64>) {
    let mut v = Vec::with_capacity(RL2_VEC_DIM);
    v.extend_from_slice(obs);
    v.extend_from_slice(prev_action);
    (v, alloc::vec![prev_reward, if episode_start { 1.0 } else { 0.0 }])
}

/// RL² training settings. Lifetime lengths come from `inner`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rl2Config {
    pub benchmark: Benchmark,
    pub seed: u64,
    pub inner: PpoConfig,
    pub meta: MetaPpoConfig,
    pub arch: RecurrentArch,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub initial_std: f64,
}

impl Rl2Config {
    pub fn new(benchmark: Benchmark, seed: u64) -> Self {
        let inner = PpoConfig::default();
        Rl2Config {
            benchmark,
            seed,
            initial_std: math::exp(inner.init_log_std),
            inner,
            meta: MetaPpoConfig::default(),
            arch: RecurrentArch::default(),
            gamma: 0.99,
            gae_lambda: 0.95,
        }
    }
}

/// Builds the PPO sequence of one RL² lifetime from normalised rewards.
pub fn rl2_sequence(record: &LifetimeRecord, trace: &Rl2Trace, rewards: &[f64], gamma: f64, lambda: f64) -> SequenceData {
    let n = trace.log_probs.len();
    let mut dones = alloc::vec![false; n];
    if n > 0 {
        dones[n - 1] = true;
    }
    let (adv, ret) = compute_gae(rewards, &trace.values, &dones, gamma, lambda);
    debug_assert_eq!(record.len(), n);
    SequenceData {
        vec_dim: RL2_VEC_DIM,
        n_scalars: RL2_SCALARS,
        out_dim: ACT_DIM,
        vec_in: trace.vec_in.clone(),
        scalars: trace.scalars.clone(),
        actions: trace.actions.clone(),
        old_log_probs: trace.log_probs.clone(),
        advantages: adv,
        returns: ret,
        policy_mask: trace.deterministic.iter().map(|d| !d).collect(),
        checkpoints: trace.checkpoints.clone(),
        checkpoint_every: trace.checkpoint_every,
    }
}

/// One row of the RL² training log.
#[derive(Clone, Debug, PartialEq)]
pub struct Rl2LogRow {
    pub update: usize,
    pub validation_return: f64,
    pub mean_final_success: f64,
    pub stats: UpdateStats,
}

pub struct Rl2TrainResult {
    pub policy: Rl2Policy,
    pub log: Vec<Rl2LogRow>,
    pub stop: StopReason,
}

/// Meta-trains the RL² policy with the outer-loop schedule of `cfg.meta`.
pub fn train_rl2<E: Executor>(cfg: &Rl2Config, exec: &E, mut on_update: impl FnMut(&Rl2LogRow, &Rl2Policy) -> Result<()>) -> Result<Rl2TrainResult> {
    cfg.inner.validate()?;
    cfg.meta.validate(cfg.inner.lifetime_steps())?;
    let root = SeedTree::new(cfg.seed);
    let pools = TaskPools::build(cfg.benchmark, cfg.seed);
    let mut policy = Rl2Policy::new(&cfg.arch, cfg.initial_std, &mut root.stream("rl2/init"))?;
    let mut adam = AdamState::new(&policy.params, cfg.meta.adam_eps);
    let mut normalizer = RewardNormalizer::new(cfg.meta.e_rewards_target_mean);
    let mut tracker = PlateauTracker::new(cfg.meta.plateau_patience);
    let mut recent: VecDeque<f64> = VecDeque::new();
    let rcfg = RecurrentPpoConfig::from(&cfg.meta);
    let mut log = Vec::new();
    let mut update = 0usize;
    loop {
        let tree = root.child(&format!("rl2/update/{update}"));
        let mut task_rng = tree.stream("tasks");
        let tasks: Vec<TaskSpec> =
            (0..cfg.meta.num_inner_loops_per_update).map(|_| pools.sample_task(Split::Train, &mut task_rng)).collect();
        let p = &policy;
        let runs = exec.map(&tasks, |i, task| p.run_lifetime(task, &cfg.inner, cfg.meta.k, &tree.child(&format!("lifetime/{i}"))))?;
        let records: Vec<LifetimeRecord> = runs.iter().map(|(r, _)| r.clone()).collect();
        let rewards = normalizer.normalize_batch(&records);
        let seqs: Vec<SequenceData> =
            runs.iter().zip(&rewards).map(|((r, tr), w)| rl2_sequence(r, tr, w, cfg.gamma, cfg.gae_lambda)).collect();
        let stats = recurrent_ppo_update(&policy.net, &mut policy.params, &mut adam, &seqs, &rcfg, exec, &mut tree.stream("shuffle"))?;
        for r in &records {
            let n = cfg.meta.num_episodes_of_validation.min(r.episodes.len()).max(1);
            recent.push_back(r.episodes[r.episodes.len() - n..].iter().map(|e| e.sparse_return).sum::<f64>() / n as f64);
            while recent.len() > cfg.meta.num_lifetimes_for_validation {
                recent.pop_front();
            }
        }
        let validation_return = recent.iter().sum::<f64>() / recent.len() as f64;
        let row = Rl2LogRow {
            update,
            validation_return,
            mean_final_success: records.iter().map(|r| r.final_success()).sum::<f64>() / records.len() as f64,
            stats,
        };
        on_update(&row, &policy)?;
        log.push(row);
        update += 1;
        if tracker.observe(validation_return) {
            return Ok(Rl2TrainResult { policy, log, stop: StopReason::Plateau });
        }
        if cfg.meta.max_outer_updates.is_some_and(|m| update >= m) {
            return Ok(Rl2TrainResult { policy, log, stop: StopReason::MaxUpdates });
        }
    }
}

/// Differentiable log-density of `actions` under the policy at `state`,
/// used by tests to probe the flag input.
pub fn rl2_log_density(policy: &Rl2Policy, v: &[f64], s: &[f64], state: &LstmState, action: &[f64]) -> Result<f64> {
    let mut g = Graph::new(&policy.params);
    let vi = g.input(Tensor::row_vector(v));
    let si = g.input(Tensor::row_vector(s));
    let h = g.input(Tensor::row_vector(&state.h));
    let c = g.input(Tensor::row_vector(&state.c));
    let n = policy.net.step(&mut g, vi, si, h, c)?;
    let lp = g.gaussian_log_density(n.mean, n.log_std, Tensor::row_vector(action));
    Ok(g.value(lp).item())
}
