//! Task-level PPO learner run once per lifetime.
//!
//! A fresh Gaussian MLP policy (and, unless advantages come from outside, an
//! MLP critic) is trained on one task for a fixed number of rollout/update
//! cycles. The reward channel of each rollout comes from a [`SignalMode`]:
//! one of the environment rewards or a [`SignalGenerator`] such as the
//! meta-agent. After learning, a few validation episodes are played.

use crate::env::{self, EnvState, Observation, TaskSpec, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::nn::{Mlp, MlpSpec, OutputActivation};
use crate::optim::{clip_global_norm, AdamState};
use crate::rng::{normal, Rng, SeedTree};
use crate::tensor::{Gradients, ParamId, ParamSet, Tensor};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;

/// Inner-loop hyperparameters. Step counts are already at run scale.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub lr: f64,
    pub adam_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub update_epochs: usize,
    pub num_minibatches: usize,
    pub clip_coef: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    /// Rollout length per update.
    pub num_steps: usize,
    /// Steps used for learning; a multiple of `num_steps`.
    pub learning_steps: usize,
    pub horizon: usize,
    pub validation_stochastic: usize,
    pub validation_deterministic: usize,
    pub hidden: usize,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 3e-4,
            adam_eps: 1e-5,
            gamma: 0.99,
            gae_lambda: 0.95,
            update_epochs: 64,
            num_minibatches: 16,
            clip_coef: 0.2,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantage: true,
            num_steps: 400,
            learning_steps: 800,
            horizon: 100,
            validation_stochastic: 2,
            validation_deterministic: 2,
            hidden: 64,
            init_log_std: libm::log(0.6),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("inner PPO: {m}")));
        if self.horizon == 0 || self.num_steps == 0 || !self.num_steps.is_multiple_of(self.horizon) {
            return bad("num_steps must be a positive multiple of the episode length");
        }
        if self.learning_steps == 0 || !self.learning_steps.is_multiple_of(self.num_steps) {
            return bad("learning steps must be a positive multiple of num_steps");
        }
        if self.num_minibatches == 0 || self.num_minibatches > self.num_steps {
            return bad("num_minibatches must lie in [1, num_steps]");
        }
        if self.update_epochs == 0 || self.hidden == 0 {
            return bad("update_epochs and hidden width must be positive");
        }
        if !(self.lr >= 0.0 && self.max_grad_norm > 0.0 && self.clip_coef > 0.0 && self.adam_eps > 0.0) {
            return bad("lr, max_grad_norm, clip_coef and adam_eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn num_updates(&self) -> usize {
        self.learning_steps / self.num_steps
    }

    pub fn validation_episodes(&self) -> usize {
        self.validation_stochastic + self.validation_deterministic
    }

    /// Environment steps in one lifetime.
    pub fn lifetime_steps(&self) -> usize {
        self.learning_steps + self.validation_episodes() * self.horizon
    }
}

/// Network structure of the inner agent; parameter values live in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct InnerNets {
    pub actor: Mlp,
    pub log_std: ParamId,
    pub critic: Option<Mlp>,
}

/// Policy output for a batch of observations.
pub struct PolicyNodes {
    pub mean: NodeId,
    pub log_std: NodeId,
}

impl InnerNets {
    /// Orthogonal init with gain `sqrt 2` on hidden layers and `0.01` on outputs.
    pub fn new(params: &mut ParamSet, hidden: usize, init_log_std: f64, with_critic: bool, rng: &mut Rng) -> Result<Self> {
        let g = math::sqrt(2.0);
        let spec = MlpSpec::new(&[OBS_DIM, hidden, hidden, ACT_DIM], OutputActivation::Tanh { scale: 1.0 });
        let actor = Mlp::new(spec, params, "actor", g, 0.01, rng)?;
        let log_std = params.add("actor.log_std", Tensor::filled(1, ACT_DIM, init_log_std));
        let critic = if with_critic {
            let spec = MlpSpec::new(&[OBS_DIM, hidden, hidden, 1], OutputActivation::Identity);
            Some(Mlp::new(spec, params, "critic", g, 1.0, rng)?)
        } else {
            None
        };
        Ok(InnerNets { actor, log_std, critic })
    }

    pub fn policy(&self, g: &mut Graph, obs: NodeId) -> Result<PolicyNodes> {
        let mean = self.actor.forward(g, obs)?;
        let log_std = g.param(self.log_std);
        Ok(PolicyNodes { mean, log_std })
    }

    pub fn value(&self, g: &mut Graph, obs: NodeId) -> Result<Option<NodeId>> {
        self.critic.as_ref().map(|c| c.forward(g, obs)).transpose()
    }

    /// Whether a parameter belongs to the critic.
    pub fn is_critic(&self, id: ParamId) -> bool {
        self.critic.as_ref().is_some_and(|c| c.layers.iter().any(|l| l.w == id || l.b == id))
    }
}

/// Parameters, structure and optimiser of one inner agent.
#[derive(Clone, Debug)]
pub struct InnerAgent {
    pub nets: InnerNets,
    pub params: ParamSet,
    pub adam: AdamState,
}

/// Sampled or deterministic action with its density under the policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    /// Unclipped action; the environment clips it.
    pub action: [f64; ACT_DIM],
    pub log_prob: f64,
    pub value: f64,
}

impl InnerAgent {
    pub fn new(cfg: &PpoConfig, with_critic: bool, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let nets = InnerNets::new(&mut params, cfg.hidden, cfg.init_log_std, with_critic, rng)?;
        let adam = AdamState::new(&params, cfg.adam_eps);
        Ok(InnerAgent { nets, params, adam })
    }

    /// Samples an action (or takes the mean when `deterministic`).
    pub fn act(&self, obs: &Observation, deterministic: bool, rng: &mut Rng) -> Result<ActionSample> {
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::row_vector(obs));
        let pol = self.nets.policy(&mut g, x)?;
        let value = match self.nets.value(&mut g, x)? {
            Some(v) => g.value(v).item(),
            None => 0.0,
        };
        let mean = g.value(pol.mean).row(0).to_vec();
        let ls = g.value(pol.log_std).row(0).to_vec();
        let mut action = [0.0; ACT_DIM];
        for k in 0..ACT_DIM {
            action[k] = if deterministic { mean[k] } else { mean[k] + math::exp(ls[k]) * normal(rng) };
        }
        let lp = g.gaussian_log_density(pol.mean, pol.log_std, Tensor::row_vector(&action));
        let log_prob = g.value(lp).item();
        if !(log_prob.is_finite() && value.is_finite() && action.iter().all(|a| a.is_finite())) {
            return Err(Error::numeric("policy produced a non-finite action, density or value"));
        }
        Ok(ActionSample { action, log_prob, value })
    }
}

/// Everything the signal generator sees about one transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaInput {
    pub obs: Observation,
    pub action: [f64; ACT_DIM],
    /// Log-density of `action` under the inner policy.
    pub policy_log_prob: f64,
    /// Sparse extrinsic reward of this transition.
    pub sparse_reward: f64,
    pub prev_signal: f64,
    pub prev_signal_log_prob: f64,
    /// `obs` is the first observation of an episode.
    pub episode_start: bool,
}

/// A generated training signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalOutput {
    pub value: f64,
    pub log_prob: f64,
    /// Outer critic estimate at this step.
    pub outer_value: f64,
}

/// Per-step signals emitted by a generator over a lifetime.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetaTrace {
    pub signals: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub outer_values: Vec<f64>,
    /// Recurrent state before step `i * checkpoint_every`, flattened.
    pub checkpoints: Vec<Vec<f64>>,
    pub checkpoint_every: usize,
    pub std_clamps: u64,
}

/// Source of per-transition training signals other than environment rewards.
pub trait SignalGenerator {
    fn emit(&mut self, input: &MetaInput) -> Result<SignalOutput>;

    /// Trace recorded so far; called once when the lifetime ends.
    fn take_trace(&mut self) -> Option<MetaTrace> {
        None
    }
}

/// What fills the inner learner's reward (or advantage) channel.
pub enum SignalMode<'a> {
    ShapedExtrinsic,
    SparseExtrinsic,
    /// Generated values replace rewards; GAE and the critic still run.
    MetaIntrinsic(&'a mut dyn SignalGenerator),
    /// Generated values are the advantages; there is no critic.
    MetaAdvantage(&'a mut dyn SignalGenerator),
}

impl SignalMode<'_> {
    pub fn uses_critic(&self) -> bool {
        !matches!(self, SignalMode::MetaAdvantage(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            SignalMode::ShapedExtrinsic => "shaped",
            SignalMode::SparseExtrinsic => "sparse",
            SignalMode::MetaIntrinsic(_) => "intrinsic",
            SignalMode::MetaAdvantage(_) => "advantage",
        }
    }
}

/// On-policy data for one PPO update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs: Vec<Observation>,
    pub actions: Vec<[f64; ACT_DIM]>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Training signal: reward, or advantage in meta-advantage mode.
    pub signals: Vec<f64>,
    /// Step ends an episode.
    pub dones: Vec<bool>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, obs: Observation, s: &ActionSample, signal: f64, done: bool) {
        self.obs.push(obs);
        self.actions.push(s.action);
        self.log_probs.push(s.log_prob);
        self.values.push(s.value);
        self.signals.push(signal);
        self.dones.push(done);
    }
}

/// Generalised advantage estimation with a zero bootstrap after every
/// episode end. Returns `(advantages, returns)`.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(rewards.len() == values.len() && values.len() == dones.len(), "GAE inputs differ in length");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut last = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if dones[t] || t + 1 == n { (0.0, 0.0) } else { (values[t + 1], last) };
        let delta = rewards[t] + gamma * next_value - values[t];
        last = delta + gamma * lambda * carry;
        adv[t] = last;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Statistics of one PPO update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub pg_loss: f64,
    pub v_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub grad_steps: usize,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub skipped_steps: u64,
    pub clamped_ratios: u64,
}

/// Minibatch inputs of the inner PPO loss.
#[derive(Clone, Debug, PartialEq)]
pub struct MinibatchData {
    pub obs: Tensor,
    pub actions: Tensor,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Option<Vec<f64>>,
}

impl MinibatchData {
    pub fn gather(buf: &RolloutBuffer, adv: &[f64], returns: Option<&[f64]>, idx: &[usize]) -> Self {
        let mut obs = Vec::with_capacity(idx.len() * OBS_DIM);
        let mut act = Vec::with_capacity(idx.len() * ACT_DIM);
        for &i in idx {
            obs.extend_from_slice(&buf.obs[i]);
            act.extend_from_slice(&buf.actions[i]);
        }
        MinibatchData {
            obs: Tensor::from_vec(idx.len(), OBS_DIM, obs).expect("gathered shape"),
            actions: Tensor::from_vec(idx.len(), ACT_DIM, act).expect("gathered shape"),
            old_log_probs: idx.iter().map(|&i| buf.log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| adv[i]).collect(),
            returns: returns.map(|r| idx.iter().map(|&i| r[i]).collect()),
        }
    }
}

/// Subtracts the mean and divides by the unbiased std plus `1e-8`.
/// A constant batch maps to exact zeros.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.iter().all(|a| *a == adv[0]) {
        return vec![0.0; adv.len()];
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = if adv.len() > 1 { math::sample_std(adv) } else { 0.0 };
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Value and gradient of the clipped PPO loss on one minibatch, plus
/// `(approx_kl, clip_frac, pg_loss, v_loss, entropy)` diagnostics.
pub fn ppo_minibatch_loss(
    nets: &InnerNets,
    params: &ParamSet,
    mb: &MinibatchData,
    cfg: &PpoConfig,
) -> Result<(f64, Gradients, [f64; 5])> {
    let b = mb.obs.rows();
    let mut g = Graph::new(params);
    let x = g.input(mb.obs.clone());
    let pol = nets.policy(&mut g, x)?;
    let new_lp = g.gaussian_log_density(pol.mean, pol.log_std, mb.actions.clone());
    let old = g.input(Tensor::from_vec(b, 1, mb.old_log_probs.clone())?);
    let log_ratio = g.sub(new_lp, old);
    let ratio = g.exp(log_ratio);
    let adv = if cfg.normalize_advantage { normalize_advantages(&mb.advantages) } else { mb.advantages.clone() };
    let adv = g.input(Tensor::from_vec(b, 1, adv)?);
    let s1 = g.mul(ratio, adv);
    let clipped = g.clamp(ratio, 1.0 - cfg.clip_coef, 1.0 + cfg.clip_coef);
    let s2 = g.mul(clipped, adv);
    let surr = g.min(s1, s2);
    let surr = g.mean(surr);
    let mut loss = g.scale(surr, -1.0);
    let pg_loss = g.value(loss).item();

    let ls = g.sum(pol.log_std);
    let entropy = g.value(ls).item() + 0.5 * ACT_DIM as f64 * (1.0 + math::LN_2PI);
    if cfg.entropy_coef != 0.0 {
        let e = g.scale(ls, -cfg.entropy_coef);
        loss = g.add(loss, e);
    }

    let mut v_loss = 0.0;
    if let (Some(v), Some(ret)) = (nets.value(&mut g, x)?, mb.returns.as_ref()) {
        let r = g.input(Tensor::from_vec(b, 1, ret.clone())?);
        let d = g.sub(v, r);
        let sq = g.square(d);
        let m = g.mean(sq);
        v_loss = 0.5 * g.value(m).item();
        let term = g.scale(m, 0.5 * cfg.value_coef);
        loss = g.add(loss, term);
    }

    let total = g.value(loss).item();
    if !total.is_finite() {
        return Err(Error::numeric("inner PPO loss is not finite"));
    }
    let lr = g.value(log_ratio).data();
    let approx_kl = lr.iter().map(|l| math::exp(*l) - 1.0 - l).sum::<f64>() / b as f64;
    let clip_frac = lr.iter().filter(|l| math::fabs(math::exp(**l) - 1.0) > cfg.clip_coef).count() as f64 / b as f64;
    let grads = g.backward(loss)?;
    Ok((total, grads, [approx_kl, clip_frac, pg_loss, v_loss, entropy]))
}

/// PPO update over a full buffer with the configured learning rate.
pub fn ppo_update(
    agent: &mut InnerAgent,
    buf: &RolloutBuffer,
    adv: &[f64],
    returns: Option<&[f64]>,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    ppo_update_with_lrs(agent, buf, adv, returns, cfg, cfg.lr, cfg.lr, rng)
}

/// [`ppo_update`] with separate policy and critic learning rates.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update_with_lrs(
    agent: &mut InnerAgent,
    buf: &RolloutBuffer,
    adv: &[f64],
    returns: Option<&[f64]>,
    cfg: &PpoConfig,
    policy_lr: f64,
    critic_lr: f64,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    let n = buf.len();
    if n == 0 || adv.len() != n || returns.is_some_and(|r| r.len() != n) {
        return Err(Error::internal("rollout buffer and advantage arrays disagree"));
    }
    if agent.nets.critic.is_some() != returns.is_some() {
        return Err(Error::internal("returns must be given exactly when a critic exists"));
    }
    let mb_size = n / cfg.num_minibatches;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut sums = [0.0; 5];
    let mut count = 0.0;
    for _ in 0..cfg.update_epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb_size).take(cfg.num_minibatches) {
            let mb = MinibatchData::gather(buf, adv, returns, chunk);
            let (_, grads, diag) = ppo_minibatch_loss(&agent.nets, &agent.params, &mb, cfg)?;
            agent.params.zero_grad();
            agent.params.accumulate(&grads)?;
            clip_global_norm(&mut agent.params, cfg.max_grad_norm);
            let nets = &agent.nets;
            match agent.adam.step_with(&mut agent.params, |id| if nets.is_critic(id) { critic_lr } else { policy_lr }) {
                Ok(()) => stats.grad_steps += 1,
                Err(Error::Numeric(_)) => stats.skipped_steps += 1,
                Err(e) => return Err(e),
            }
            for (s, d) in sums.iter_mut().zip(diag) {
                *s += d;
            }
            count += 1.0;
        }
        stats.epochs_run += 1;
    }
    if stats.grad_steps == 0 {
        return Err(Error::numeric("every inner PPO step had a non-finite gradient"));
    }
    stats.approx_kl = sums[0] / count;
    stats.clip_frac = sums[1] / count;
    stats.pg_loss = sums[2] / count;
    stats.v_loss = sums[3] / count;
    stats.entropy = sums[4] / count;
    Ok(stats)
}

/// One environment transition of a lifetime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: [f64; ACT_DIM],
    pub log_prob: f64,
    pub shaped_reward: f64,
    pub sparse_reward: f64,
    pub success: bool,
    pub episode: usize,
    pub episode_start: bool,
    pub episode_done: bool,
}

/// Outcome of one episode inside a lifetime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub index: usize,
    pub sparse_return: f64,
    pub shaped_return: f64,
    pub success: bool,
    pub validation: bool,
    pub deterministic: bool,
}

/// Everything that happened in one lifetime.
#[derive(Clone, Debug, PartialEq)]
pub struct LifetimeRecord {
    pub task: TaskSpec,
    pub horizon: usize,
    pub learning_steps: usize,
    pub transitions: Vec<Transition>,
    /// Step indices at which an inner update happened (after that many steps).
    pub update_boundaries: Vec<usize>,
    pub episodes: Vec<EpisodeSummary>,
    pub meta: Option<MetaTrace>,
    pub update_stats: Vec<UpdateStats>,
}

impl LifetimeRecord {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Mean success over the deterministic validation episodes.
    pub fn final_success(&self) -> f64 {
        mean_success(self.episodes.iter().filter(|e| e.validation && e.deterministic))
    }

    /// Mean sparse return over all validation episodes.
    pub fn validation_return(&self) -> f64 {
        let v: Vec<f64> = self.episodes.iter().filter(|e| e.validation).map(|e| e.sparse_return).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn success_per_episode(&self) -> Vec<bool> {
        self.episodes.iter().map(|e| e.success).collect()
    }
}

fn mean_success<'a>(it: impl Iterator<Item = &'a EpisodeSummary>) -> f64 {
    let (mut n, mut s) = (0usize, 0usize);
    for e in it {
        n += 1;
        s += e.success as usize;
    }
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

/// Lifetime-wide running bookkeeping shared by learning and validation.
struct Runner<'m, 'g> {
    task: TaskSpec,
    horizon: usize,
    env_rng: Rng,
    act_rng: Rng,
    state: EnvState,
    obs: Observation,
    prev_signal: f64,
    prev_signal_lp: f64,
    episode: usize,
    ep_sparse: f64,
    ep_shaped: f64,
    record: LifetimeRecord,
    mode: &'m mut SignalMode<'g>,
}

impl Runner<'_, '_> {
    /// Plays one step and returns `(sample, training signal, done)`.
    fn step(&mut self, agent: &InnerAgent, deterministic: bool, validation: bool) -> Result<(Observation, ActionSample, f64, bool)> {
        let obs = self.obs;
        let episode_start = self.state.t == 0;
        let sample = agent.act(&obs, deterministic, &mut self.act_rng)?;
        let out = env::step(&mut self.state, &self.task, &sample.action)?;
        let input = MetaInput {
            obs,
            action: sample.action,
            policy_log_prob: sample.log_prob,
            sparse_reward: out.sparse_reward,
            prev_signal: self.prev_signal,
            prev_signal_log_prob: self.prev_signal_lp,
            episode_start,
        };
        let signal = match self.mode {
            SignalMode::ShapedExtrinsic => out.shaped_reward,
            SignalMode::SparseExtrinsic => out.sparse_reward,
            SignalMode::MetaIntrinsic(gen) | SignalMode::MetaAdvantage(gen) => {
                let s = gen.emit(&input)?;
                self.prev_signal = s.value;
                self.prev_signal_lp = s.log_prob;
                s.value
            }
        };
        self.record.transitions.push(Transition {
            obs,
            action: sample.action,
            log_prob: sample.log_prob,
            shaped_reward: out.shaped_reward,
            sparse_reward: out.sparse_reward,
            success: out.success,
            episode: self.episode,
            episode_start,
            episode_done: out.episode_done,
        });
        self.ep_sparse += out.sparse_reward;
        self.ep_shaped += out.shaped_reward;
        if out.episode_done {
            self.record.episodes.push(EpisodeSummary {
                index: self.episode,
                sparse_return: self.ep_sparse,
                shaped_return: self.ep_shaped,
                success: self.state.succeeded,
                validation,
                deterministic,
            });
            self.episode += 1;
            self.ep_sparse = 0.0;
            self.ep_shaped = 0.0;
            let (s, o) = env::reset(&self.task, self.horizon, &mut self.env_rng);
            self.state = s;
            self.obs = o;
        } else {
            self.obs = out.observation;
        }
        Ok((obs, sample, signal, out.episode_done))
    }
}

/// Trains a fresh inner agent on `task` and plays the validation episodes.
///
/// Randomness comes from named streams of `seeds`: `init` (network weights),
/// `env` (reset noise), `act` (action sampling) and `ppo` (minibatch order).
pub fn run_lifetime(task: &TaskSpec, mode: &mut SignalMode, cfg: &PpoConfig, seeds: &SeedTree) -> Result<LifetimeRecord> {
    run_lifetime_with_lrs(task, mode, cfg, seeds, cfg.lr, cfg.lr)
}

/// [`run_lifetime`] with separate policy and critic learning rates.
pub fn run_lifetime_with_lrs(
    task: &TaskSpec,
    mode: &mut SignalMode,
    cfg: &PpoConfig,
    seeds: &SeedTree,
    policy_lr: f64,
    critic_lr: f64,
) -> Result<LifetimeRecord> {
    cfg.validate()?;
    let mut agent = InnerAgent::new(cfg, mode.uses_critic(), &mut seeds.stream("init"))?;
    let mut env_rng = seeds.stream("env");
    let (state, obs) = env::reset(task, cfg.horizon, &mut env_rng);
    let mut ppo_rng = seeds.stream("ppo");
    let record = LifetimeRecord {
        task: *task,
        horizon: cfg.horizon,
        learning_steps: cfg.learning_steps,
        transitions: Vec::with_capacity(cfg.lifetime_steps()),
        update_boundaries: Vec::new(),
        episodes: Vec::new(),
        meta: None,
        update_stats: Vec::new(),
    };
    let mut r = Runner {
        task: *task,
        horizon: cfg.horizon,
        env_rng,
        act_rng: seeds.stream("act"),
        state,
        obs,
        prev_signal: 0.0,
        prev_signal_lp: 0.0,
        episode: 0,
        ep_sparse: 0.0,
        ep_shaped: 0.0,
        record,
        mode,
    };
    for _ in 0..cfg.num_updates() {
        let mut buf = RolloutBuffer::default();
        for _ in 0..cfg.num_steps {
            let (obs, s, signal, done) = r.step(&agent, false, false)?;
            buf.push(obs, &s, signal, done);
        }
        let stats = match r.mode {
            SignalMode::MetaAdvantage(_) => ppo_update_with_lrs(&mut agent, &buf, &buf.signals, None, cfg, policy_lr, critic_lr, &mut ppo_rng),
            _ => {
                let (adv, ret) = compute_gae(&buf.signals, &buf.values, &buf.dones, cfg.gamma, cfg.gae_lambda);
                ppo_update_with_lrs(&mut agent, &buf, &adv, Some(&ret), cfg, policy_lr, critic_lr, &mut ppo_rng)
            }
        }
        .map_err(|e| e.context(&format!("inner update {}", r.record.update_boundaries.len())))?;
        r.record.update_boundaries.push(r.record.transitions.len());
        r.record.update_stats.push(stats);
    }
    for v in 0..cfg.validation_episodes() {
        let deterministic = v >= cfg.validation_stochastic;
        for _ in 0..cfg.horizon {
            r.step(&agent, deterministic, true)?;
        }
    }
    let mut record = r.record;
    record.meta = match r.mode {
        SignalMode::MetaIntrinsic(gen) | SignalMode::MetaAdvantage(gen) => gen.take_trace(),
        _ => None,
    };
    Ok(record)
}
