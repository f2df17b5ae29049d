//! Meta-training of the signal generator.
//!
//! Each outer update runs a batch of lifetimes with the current meta-agent,
//! rescales their shaped rewards per task class, credits every emitted
//! signal with an episodically discounted blend of n-step returns that skips
//! rewards the signal could not have influenced yet, and improves the
//! meta-agent with PPO over truncated recurrent windows.

use crate::env::{Benchmark, ClassRewardStats, Split, TaskClass, TaskPools, TaskSpec};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::graph::Graph;
use crate::inner::{run_lifetime, LifetimeRecord, PpoConfig, SignalMode, UpdateStats};
use crate::math;
use crate::meta_agent::{input_features, replay_inputs, MetaAgent, MetaMode, RecurrentArch};
use crate::optim::{clip_global_norm, AdamState};
use crate::recurrent::{unflatten_state, RecurrentNet};
use crate::rng::SeedTree;
use crate::tensor::{Gradients, ParamSet, Tensor};
use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec::Vec;
use rand::seq::SliceRandom;

/// Outer-loop PPO hyperparameters. Step counts are at run scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaPpoConfig {
    pub lr: f64,
    pub adam_eps: f64,
    pub num_inner_loops_per_update: usize,
    pub meta_gamma: f64,
    /// Truncation length of recurrent windows.
    pub k: usize,
    pub update_epochs: usize,
    /// Windows per gradient step; 0 means all windows sharing an offset.
    pub num_minibatches: usize,
    pub clip_coef: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub target_kl: Option<f64>,
    pub normalize_advantage: bool,
    pub e_rewards_target_mean: f64,
    pub num_lifetimes_for_validation: usize,
    pub num_episodes_of_validation: usize,
    /// Updates without a new best validation return before stopping.
    pub plateau_patience: usize,
    pub max_outer_updates: Option<usize>,
    /// Re-evaluate stored log-densities before every update.
    pub check_on_policy: bool,
}

impl Default for MetaPpoConfig {
    fn default() -> Self {
        MetaPpoConfig {
            lr: 5e-5,
            adam_eps: 1e-5,
            num_inner_loops_per_update: 30,
            meta_gamma: 0.9,
            k: 80,
            update_epochs: 12,
            num_minibatches: 0,
            clip_coef: 0.2,
            entropy_coef: 0.0005,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            target_kl: Some(0.01),
            normalize_advantage: true,
            e_rewards_target_mean: 1e-4,
            num_lifetimes_for_validation: 60,
            num_episodes_of_validation: 4,
            plateau_patience: 200,
            max_outer_updates: None,
            check_on_policy: true,
        }
    }
}

impl MetaPpoConfig {
    pub fn validate(&self, lifetime_len: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("outer PPO: {m}")));
        if self.k == 0 || !lifetime_len.is_multiple_of(self.k) {
            return bad("ppo.k must divide the lifetime length");
        }
        if self.num_inner_loops_per_update == 0 || self.update_epochs == 0 {
            return bad("num_inner_loops_per_update and update_epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.meta_gamma) {
            return bad("meta_gamma must lie in [0, 1]");
        }
        if !(self.lr >= 0.0 && self.max_grad_norm > 0.0 && self.clip_coef > 0.0 && self.e_rewards_target_mean > 0.0) {
            return bad("learning rate, max_grad_norm, clip_coef and e_rewards_target_mean must be positive");
        }
        if self.num_lifetimes_for_validation == 0 || self.plateau_patience == 0 {
            return bad("validation window and plateau patience must be positive");
        }
        Ok(())
    }
}

/// Settings of the n-step meta-advantage estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct AeConfig {
    pub bootstrapping_lambda: f64,
    pub starting_n: usize,
    pub num_n_step_estimates: usize,
    pub skip_rate: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig { bootstrapping_lambda: 0.85, starting_n: 440, num_n_step_estimates: 6, skip_rate: 60 }
    }
}

impl AeConfig {
    /// `rollout` is the inner loop's rollout length.
    pub fn validate(&self, rollout: usize) -> Result<()> {
        if self.num_n_step_estimates == 0 {
            return Err(Error::config("ae.num_n_step_estimates must be positive"));
        }
        if self.starting_n < self.skip_rate {
            return Err(Error::config("ae.starting_n must not be shorter than ae.skip_rate"));
        }
        if self.starting_n < rollout {
            return Err(Error::config("ae.starting_n must be at least the inner rollout length"));
        }
        if !(0.0..=1.0).contains(&self.bootstrapping_lambda) {
            return Err(Error::config("ae.bootstrapping_lambda must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Weight of episode `e`, counted from the crediting episode.
pub fn episode_weights(num_episodes: usize, meta_gamma: f64) -> Vec<f64> {
    (0..num_episodes).map(|e| math::powi(meta_gamma, e as i32)).collect()
}

/// Episodically discounted sum of `rewards[from..]`: the reward at step `u`
/// is weighted by `meta_gamma^(episode[u] - episode[from])`.
pub fn lifetime_objective(rewards: &[f64], episodes: &[usize], from: usize, meta_gamma: f64) -> f64 {
    if from >= rewards.len() {
        return 0.0;
    }
    let base = episodes[from];
    let w = episode_weights(episodes[rewards.len() - 1] - base + 1, meta_gamma);
    rewards[from..].iter().zip(&episodes[from..]).map(|(r, e)| w[e - base] * r).sum()
}

/// First update boundary strictly after `t`, or `len` when none remains.
pub fn skip_boundary(t: usize, boundaries: &[usize], len: usize) -> usize {
    boundaries.iter().copied().find(|b| *b > t).unwrap_or(len).min(len)
}

/// Per-signal n-step estimates, blended returns and advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaReturnTable {
    pub estimates: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Credits the signal emitted at every step `t`.
///
/// Estimate `j` sums episodically discounted `rewards` over
/// `[b(t), t + starting_n + j * skip_rate)`, anchored at the episode of
/// `b(t)`, and bootstraps with `values` at the window end (zero past the
/// lifetime). Estimates are blended with weights proportional to
/// `lambda^j`; the advantage is the blend minus `values[t]`.
pub fn estimate_meta_advantages(
    rewards: &[f64],
    episodes: &[usize],
    boundaries: &[usize],
    values: &[f64],
    ae: &AeConfig,
    meta_gamma: f64,
) -> Result<MetaReturnTable> {
    let len = rewards.len();
    if episodes.len() != len || values.len() != len {
        return Err(Error::internal("estimator inputs differ in length"));
    }
    if ae.num_n_step_estimates == 0 || ae.starting_n < ae.skip_rate {
        return Err(Error::config("invalid advantage-estimator settings"));
    }
    let n_est = ae.num_n_step_estimates;
    let raw: Vec<f64> = (0..n_est).map(|j| math::powi(ae.bootstrapping_lambda, j as i32)).collect();
    let total: f64 = raw.iter().sum();
    let blend: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let max_ep = episodes.last().copied().unwrap_or(0);
    let gpow = episode_weights(max_ep + 1, meta_gamma);

    // prefix[b][i] = discounted sum of rewards over [b, b + i), per distinct boundary
    let mut prefixes: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut table = MetaReturnTable { estimates: Vec::with_capacity(len), returns: Vec::with_capacity(len), advantages: Vec::with_capacity(len) };
    for t in 0..len {
        let b = skip_boundary(t, boundaries, len);
        let anchor = episodes[b.min(len - 1)];
        let prefix = prefixes.entry(b).or_insert_with(|| {
            let mut p = Vec::with_capacity(len - b + 1);
            let mut acc = 0.0;
            p.push(acc);
            for u in b..len {
                acc += gpow[episodes[u] - anchor] * rewards[u];
                p.push(acc);
            }
            p
        });
        let mut ests = Vec::with_capacity(n_est);
        for j in 0..n_est {
            let end = t + ae.starting_n + j * ae.skip_rate;
            let stop = end.min(len);
            let mut g = if stop > b { prefix[stop - b] } else { 0.0 };
            if end < len {
                let e = episodes[end];
                if e < anchor {
                    return Err(Error::config("ae.starting_n ends a window before its skip boundary"));
                }
                g += gpow[e - anchor] * values[end];
            }
            ests.push(g);
        }
        let ret: f64 = ests.iter().zip(&blend).map(|(g, w)| g * w).sum();
        table.advantages.push(ret - values[t]);
        table.returns.push(ret);
        table.estimates.push(ests);
    }
    Ok(table)
}

/// One lifetime as seen by recurrent PPO: inputs, taken outputs and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData {
    pub vec_dim: usize,
    pub n_scalars: usize,
    pub out_dim: usize,
    /// `len x vec_dim`, row-major.
    pub vec_in: Vec<f64>,
    pub scalars: Vec<f64>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Steps that contribute to the policy loss.
    pub policy_mask: Vec<bool>,
    /// Recurrent state before step `i * checkpoint_every`.
    pub checkpoints: Vec<Vec<f64>>,
    pub checkpoint_every: usize,
}

impl SequenceData {
    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }

    fn row(v: &[f64], width: usize, t: usize) -> &[f64] {
        &v[t * width..(t + 1) * width]
    }
}

/// Recurrent PPO settings shared by the meta-agent and RL².
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentPpoConfig {
    pub lr: f64,
    pub k: usize,
    pub update_epochs: usize,
    pub num_minibatches: usize,
    pub clip_coef: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub target_kl: Option<f64>,
    pub normalize_advantage: bool,
    pub check_on_policy: bool,
}

impl From<&MetaPpoConfig> for RecurrentPpoConfig {
    fn from(c: &MetaPpoConfig) -> Self {
        RecurrentPpoConfig {
            lr: c.lr,
            k: c.k,
            update_epochs: c.update_epochs,
            num_minibatches: c.num_minibatches,
            clip_coef: c.clip_coef,
            entropy_coef: c.entropy_coef,
            value_coef: c.value_coef,
            max_grad_norm: c.max_grad_norm,
            target_kl: c.target_kl,
            normalize_advantage: c.normalize_advantage,
            check_on_policy: c.check_on_policy,
        }
    }
}

/// How the losses of one window are normalised within its gradient step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowScale {
    pub adv_mean: f64,
    pub adv_std: f64,
    /// `1 / (masked entries in the step)`.
    pub policy: f64,
    /// `1 / (all entries in the step)`.
    pub value: f64,
}

/// Diagnostics accumulated over one window.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WindowDiag {
    pub kl_sum: f64,
    pub clipped: usize,
    pub masked: usize,
    pub ratio_clamps: u64,
    pub pg_sum: f64,
    pub v_sum: f64,
    pub entropy_sum: f64,
    /// Largest `|new - old|` log-density gap seen.
    pub max_lp_gap: f64,
}

/// Bound applied to log-probability ratios.
pub const LOG_RATIO_CLAMP: f64 = 20.0;

/// Loss and gradient of the steps `[start, start + len)` of `seq`, with the
/// recurrent state entering the window taken from the stored checkpoint.
pub fn window_loss(
    net: &RecurrentNet,
    params: &ParamSet,
    seq: &SequenceData,
    start: usize,
    len: usize,
    scale: &WindowScale,
    cfg: &RecurrentPpoConfig,
) -> Result<(f64, Gradients, WindowDiag)> {
    if !start.is_multiple_of(seq.checkpoint_every) || start + len > seq.len() || len == 0 {
        return Err(Error::internal("window does not start at a checkpoint"));
    }
    let state = unflatten_state(&seq.checkpoints[start / seq.checkpoint_every]);
    let mut g = Graph::new(params);
    let mut h = g.input(Tensor::row_vector(&state.h));
    let mut c = g.input(Tensor::row_vector(&state.c));
    let mut diag = WindowDiag::default();
    let mut pg_terms = Vec::new();
    let mut ent_terms = Vec::new();
    let mut v_terms = Vec::with_capacity(len);
    for t in start..start + len {
        let vi = g.input(Tensor::row_vector(SequenceData::row(&seq.vec_in, seq.vec_dim, t)));
        let si = g.input(Tensor::row_vector(SequenceData::row(&seq.scalars, seq.n_scalars, t)));
        let nodes = net.step(&mut g, vi, si, h, c)?;
        h = nodes.h;
        c = nodes.c;
        let d = g.add_scalar(nodes.value, -seq.returns[t]);
        let sq = g.square(d);
        diag.v_sum += g.value(sq).item();
        v_terms.push(sq);
        if !seq.policy_mask[t] {
            continue;
        }
        let act = Tensor::row_vector(SequenceData::row(&seq.actions, seq.out_dim, t));
        let lp = g.gaussian_log_density(nodes.mean, nodes.log_std, act);
        let lr = g.add_scalar(lp, -seq.old_log_probs[t]);
        let lr_v = g.value(lr).item();
        diag.max_lp_gap = diag.max_lp_gap.max(math::fabs(lr_v));
        if math::fabs(lr_v) > LOG_RATIO_CLAMP {
            diag.ratio_clamps += 1;
        }
        let lr = g.clamp(lr, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
        let ratio = g.exp(lr);
        let r = g.value(ratio).item();
        diag.kl_sum += r - 1.0 - math::log(r);
        if math::fabs(r - 1.0) > cfg.clip_coef {
            diag.clipped += 1;
        }
        diag.masked += 1;
        let a = if cfg.normalize_advantage {
            (seq.advantages[t] - scale.adv_mean) / (scale.adv_std + 1e-8)
        } else {
            seq.advantages[t]
        };
        let s1 = g.scale(ratio, a);
        let cl = g.clamp(ratio, 1.0 - cfg.clip_coef, 1.0 + cfg.clip_coef);
        let s2 = g.scale(cl, a);
        let m = g.min(s1, s2);
        diag.pg_sum += g.value(m).item();
        pg_terms.push(m);
        let ent = g.sum(nodes.log_std);
        diag.entropy_sum += g.value(ent).item() + 0.5 * seq.out_dim as f64 * (1.0 + math::LN_2PI);
        ent_terms.push(ent);
    }
    let vsum = sum_nodes(&mut g, &v_terms);
    let mut loss = g.scale(vsum, 0.5 * cfg.value_coef * scale.value);
    if !pg_terms.is_empty() {
        let pg = sum_nodes(&mut g, &pg_terms);
        let pg = g.scale(pg, -scale.policy);
        loss = g.add(loss, pg);
        if cfg.entropy_coef != 0.0 {
            let e = sum_nodes(&mut g, &ent_terms);
            let e = g.scale(e, -cfg.entropy_coef * scale.policy);
            loss = g.add(loss, e);
        }
    }
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::numeric("outer PPO loss is not finite"));
    }
    let grads = g.backward(loss)?;
    Ok((value, grads, diag))
}

fn sum_nodes(g: &mut Graph, nodes: &[crate::graph::NodeId]) -> crate::graph::NodeId {
    let cat = g.concat_cols(nodes);
    g.sum(cat)
}

/// Mean and unbiased std of the masked advantages of the given windows.
fn advantage_moments(seqs: &[&SequenceData], start: usize, len: usize) -> (f64, f64, usize, usize) {
    let mut vals = Vec::new();
    let mut all = 0;
    for s in seqs {
        for t in start..start + len {
            all += 1;
            if s.policy_mask[t] {
                vals.push(s.advantages[t]);
            }
        }
    }
    let n = vals.len();
    if n == 0 {
        return (0.0, 0.0, 0, all);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let std = if n > 1 { math::sample_std(&vals) } else { 0.0 };
    (mean, std, n, all)
}

/// PPO over truncated windows of recurrent sequences.
///
/// Every epoch visits the window offsets `0, k, 2k, ...` in shuffled order.
/// At each offset the windows of all sequences (or groups of
/// `num_minibatches` of them) form one gradient step. Per-window gradients
/// are summed in sequence order, so the executor never changes the result.
pub fn recurrent_ppo_update<E: Executor>(
    net: &RecurrentNet,
    params: &mut ParamSet,
    adam: &mut AdamState,
    seqs: &[SequenceData],
    cfg: &RecurrentPpoConfig,
    exec: &E,
    rng: &mut crate::rng::Rng,
) -> Result<UpdateStats> {
    let len = seqs.first().map(|s| s.len()).ok_or_else(|| Error::internal("no sequences to update on"))?;
    if seqs.iter().any(|s| s.len() != len || s.checkpoint_every != cfg.k) || cfg.k == 0 || len % cfg.k != 0 {
        return Err(Error::config("sequences must share a length divisible by ppo.k and be checkpointed every k steps"));
    }
    let group = if cfg.num_minibatches == 0 { seqs.len() } else { cfg.num_minibatches.min(seqs.len()) };
    let mut offsets: Vec<usize> = (0..len / cfg.k).map(|i| i * cfg.k).collect();
    let mut stats = UpdateStats::default();
    if cfg.check_on_policy {
        check_on_policy(net, params, seqs, cfg, exec)?;
    }
    let (mut pg, mut vl, mut ent, mut kl_total, mut clip_total, mut masked_total) = (0.0, 0.0, 0.0, 0.0, 0usize, 0usize);
    let mut all_total = 0usize;
    for _ in 0..cfg.update_epochs {
        offsets.shuffle(rng);
        let (mut kl_epoch, mut n_epoch) = (0.0, 0usize);
        for &start in &offsets {
            for chunk in seqs.chunks(group) {
                let refs: Vec<&SequenceData> = chunk.iter().collect();
                let (adv_mean, adv_std, n_pol, n_all) = advantage_moments(&refs, start, cfg.k);
                let scale = WindowScale {
                    adv_mean,
                    adv_std,
                    policy: if n_pol > 0 { 1.0 / n_pol as f64 } else { 0.0 },
                    value: 1.0 / n_all as f64,
                };
                let p: &ParamSet = params;
                let outs = exec.map(chunk, |_, s| window_loss(net, p, s, start, cfg.k, &scale, cfg))?;
                let mut total: Option<Gradients> = None;
                for (_, gr, d) in &outs {
                    match total.as_mut() {
                        Some(t) => t.add_assign(gr),
                        None => total = Some(gr.clone()),
                    }
                    kl_epoch += d.kl_sum;
                    n_epoch += d.masked;
                    clip_total += d.clipped;
                    pg += d.pg_sum;
                    vl += d.v_sum;
                    ent += d.entropy_sum;
                    stats.clamped_ratios += d.ratio_clamps;
                }
                masked_total += n_pol;
                all_total += n_all;
                params.zero_grad();
                params.accumulate(total.as_ref().expect("non-empty chunk"))?;
                clip_global_norm(params, cfg.max_grad_norm);
                match adam.step(params, cfg.lr) {
                    Ok(()) => stats.grad_steps += 1,
                    Err(Error::Numeric(_)) => stats.skipped_steps += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        stats.epochs_run += 1;
        kl_total += kl_epoch;
        let epoch_kl = if n_epoch > 0 { kl_epoch / n_epoch as f64 } else { 0.0 };
        stats.approx_kl = epoch_kl;
        if cfg.target_kl.is_some_and(|t| epoch_kl > t) {
            stats.early_stopped = true;
            break;
        }
    }
    let _ = kl_total;
    let m = masked_total.max(1) as f64;
    stats.pg_loss = -pg / m;
    stats.entropy = ent / m;
    stats.clip_frac = clip_total as f64 / m;
    stats.v_loss = 0.5 * vl / all_total.max(1) as f64;
    Ok(stats)
}

/// Stored log-densities must be exactly what the current parameters give.
pub fn check_on_policy<E: Executor>(
    net: &RecurrentNet,
    params: &ParamSet,
    seqs: &[SequenceData],
    cfg: &RecurrentPpoConfig,
    exec: &E,
) -> Result<()> {
    let len = seqs[0].len();
    let scale = WindowScale { adv_mean: 0.0, adv_std: 1.0, policy: 0.0, value: 0.0 };
    let gaps = exec.map(seqs, |_, s| {
        let mut worst: f64 = 0.0;
        for start in (0..len).step_by(cfg.k) {
            let (_, _, d) = window_loss(net, params, s, start, cfg.k, &scale, cfg)?;
            worst = worst.max(d.max_lp_gap);
        }
        Ok(worst)
    })?;
    for (i, gap) in gaps.iter().enumerate() {
        if *gap > 1e-10 {
            return Err(Error::internal(format!("sequence {i} is off-policy: log-density gap {gap:e}")));
        }
    }
    Ok(())
}

/// Stops training once the validation return has not improved for
/// `patience` consecutive observations. The first observation counts as
/// non-improving.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauTracker {
    pub patience: usize,
    pub best: Option<f64>,
    pub since_best: usize,
}

impl PlateauTracker {
    pub fn new(patience: usize) -> Self {
        PlateauTracker { patience, best: None, since_best: 0 }
    }

    /// Records one value; returns `true` when training should stop.
    pub fn observe(&mut self, value: f64) -> bool {
        match self.best {
            Some(b) if value > b => {
                self.best = Some(value);
                self.since_best = 0;
            }
            Some(_) => self.since_best += 1,
            None => {
                self.best = Some(value);
                self.since_best = 1;
            }
        }
        self.since_best >= self.patience
    }
}

/// Per-class running statistics of shaped rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardNormalizer {
    pub target_mean: f64,
    pub stats: BTreeMap<TaskClass, ClassRewardStats>,
}

impl RewardNormalizer {
    pub fn new(target_mean: f64) -> Self {
        RewardNormalizer { target_mean, stats: BTreeMap::new() }
    }

    /// Updates every class present in `records` with its batch mean shaped
    /// reward and returns each record's rescaled shaped rewards.
    pub fn normalize_batch(&mut self, records: &[LifetimeRecord]) -> Vec<Vec<f64>> {
        let mut sums: BTreeMap<TaskClass, (f64, usize)> = BTreeMap::new();
        for r in records {
            let e = sums.entry(r.task.class).or_insert((0.0, 0));
            for t in &r.transitions {
                e.0 += t.shaped_reward;
            }
            e.1 += r.transitions.len();
        }
        let mut scales = BTreeMap::new();
        for (class, (sum, n)) in sums {
            let mean = sum / n.max(1) as f64;
            let st = self.stats.entry(class).or_insert_with(|| ClassRewardStats::new(class));
            st.update(mean);
            let s = st.scale(self.target_mean);
            st.record_normalized(mean * s);
            scales.insert(class, s);
        }
        records
            .iter()
            .map(|r| {
                let s = scales[&r.task.class];
                r.transitions.iter().map(|t| t.shaped_reward * s).collect()
            })
            .collect()
    }
}

/// Builds the PPO sequence of one meta-agent lifetime.
pub fn meta_sequence(record: &LifetimeRecord, rewards: &[f64], ae: &AeConfig, meta_gamma: f64) -> Result<SequenceData> {
    let trace = record.meta.as_ref().ok_or_else(|| Error::usage("lifetime has no meta-agent trace"))?;
    let inputs = replay_inputs(record)?;
    let episodes: Vec<usize> = record.transitions.iter().map(|t| t.episode).collect();
    let table = estimate_meta_advantages(rewards, &episodes, &record.update_boundaries, &trace.outer_values, ae, meta_gamma)?;
    let last = record.update_boundaries.last().copied().unwrap_or(0);
    let mut vec_in = Vec::with_capacity(inputs.len() * 14);
    let mut scalars = Vec::with_capacity(inputs.len() * 5);
    for inp in &inputs {
        let (v, s) = input_features(inp);
        vec_in.extend_from_slice(&v);
        scalars.extend_from_slice(&s);
    }
    Ok(SequenceData {
        vec_dim: crate::meta_agent::META_VEC_DIM,
        n_scalars: crate::meta_agent::META_SCALARS,
        out_dim: 1,
        vec_in,
        scalars,
        actions: trace.signals.clone(),
        old_log_probs: trace.log_probs.clone(),
        advantages: table.advantages,
        returns: table.returns,
        policy_mask: (0..inputs.len()).map(|t| t < last).collect(),
        checkpoints: trace.checkpoints.clone(),
        checkpoint_every: trace.checkpoint_every,
    })
}

/// Everything needed to meta-train one signal generator.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaTrainConfig {
    pub benchmark: Benchmark,
    pub mode: MetaMode,
    pub seed: u64,
    pub inner: PpoConfig,
    pub meta: MetaPpoConfig,
    pub ae: AeConfig,
    pub arch: RecurrentArch,
    pub initial_std: f64,
}

impl MetaTrainConfig {
    pub fn new(benchmark: Benchmark, mode: MetaMode, seed: u64) -> Self {
        let mut meta = MetaPpoConfig::default();
        if mode == MetaMode::Intrinsic && benchmark != Benchmark::Ml5 {
            meta.entropy_coef = 0.003;
        }
        MetaTrainConfig {
            benchmark,
            mode,
            seed,
            inner: PpoConfig::default(),
            meta,
            ae: AeConfig::default(),
            arch: RecurrentArch::default(),
            initial_std: mode.default_initial_std(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        self.meta.validate(self.inner.lifetime_steps())?;
        self.ae.validate(self.inner.num_steps)
    }
}

/// One row of the meta-training log.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterLogRow {
    pub update: usize,
    /// Mean over the batch of each lifetime's total sparse return.
    pub mean_lifetime_return: f64,
    pub validation_return: f64,
    pub mean_final_success: f64,
    pub stats: UpdateStats,
    /// `(class, running mean, normalised running mean)`.
    pub class_stats: Vec<(TaskClass, f64, f64)>,
    pub env_steps: usize,
}

/// Why meta-training stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Plateau,
    MaxUpdates,
}

pub struct MetaTrainResult {
    pub agent: MetaAgent,
    pub log: Vec<OuterLogRow>,
    pub stop: StopReason,
    pub normalizer: RewardNormalizer,
}

/// Runs one batch of meta-agent lifetimes on `tasks`.
pub fn collect_meta_lifetimes<E: Executor>(
    agent: &MetaAgent,
    tasks: &[TaskSpec],
    inner: &PpoConfig,
    k: usize,
    deterministic: bool,
    seeds: &SeedTree,
    exec: &E,
) -> Result<Vec<LifetimeRecord>> {
    exec.map(tasks, |i, task| {
        let tree = seeds.child(&format!("lifetime/{i}"));
        let mut session = agent.session(deterministic, k, tree.stream("meta"));
        let mut mode = match agent.mode {
            MetaMode::Intrinsic => SignalMode::MetaIntrinsic(&mut session),
            MetaMode::Advantage => SignalMode::MetaAdvantage(&mut session),
        };
        run_lifetime(task, &mut mode, inner, &tree)
    })
}

/// Meta-trains a signal generator until the validation return plateaus or
/// `max_outer_updates` is reached. `on_update` sees every log row.
pub fn meta_train<E: Executor>(
    cfg: &MetaTrainConfig,
    exec: &E,
    mut on_update: impl FnMut(&OuterLogRow, &MetaAgent) -> Result<()>,
) -> Result<MetaTrainResult> {
    cfg.validate()?;
    let root = SeedTree::new(cfg.seed);
    let pools = TaskPools::build(cfg.benchmark, cfg.seed);
    let mut agent = MetaAgent::new(cfg.mode, &cfg.arch, cfg.initial_std, &mut root.stream("meta/init"))?;
    let mut adam = AdamState::new(&agent.params, cfg.meta.adam_eps);
    let mut normalizer = RewardNormalizer::new(cfg.meta.e_rewards_target_mean);
    let mut tracker = PlateauTracker::new(cfg.meta.plateau_patience);
    let mut recent: VecDeque<f64> = VecDeque::new();
    let rcfg = RecurrentPpoConfig::from(&cfg.meta);
    let mut log = Vec::new();
    let mut update = 0usize;
    loop {
        let tree = root.child(&format!("update/{update}"));
        let mut task_rng = tree.stream("tasks");
        let tasks: Vec<TaskSpec> =
            (0..cfg.meta.num_inner_loops_per_update).map(|_| pools.sample_task(Split::Train, &mut task_rng)).collect();
        let records = collect_meta_lifetimes(&agent, &tasks, &cfg.inner, cfg.meta.k, false, &tree, exec)?;
        let rewards = normalizer.normalize_batch(&records);
        let seqs = records
            .iter()
            .zip(&rewards)
            .map(|(r, w)| meta_sequence(r, w, &cfg.ae, cfg.meta.meta_gamma))
            .collect::<Result<Vec<_>>>()?;
        let stats = recurrent_ppo_update(&agent.net, &mut agent.params, &mut adam, &seqs, &rcfg, exec, &mut tree.stream("shuffle"))?;

        for r in &records {
            let eps = &r.episodes;
            let n = cfg.meta.num_episodes_of_validation.min(eps.len()).max(1);
            let v = eps[eps.len() - n..].iter().map(|e| e.sparse_return).sum::<f64>() / n as f64;
            recent.push_back(v);
            while recent.len() > cfg.meta.num_lifetimes_for_validation {
                recent.pop_front();
            }
        }
        let validation_return = recent.iter().sum::<f64>() / recent.len() as f64;
        let b = records.len() as f64;
        let row = OuterLogRow {
            update,
            mean_lifetime_return: records.iter().map(|r| r.transitions.iter().map(|t| t.sparse_reward).sum::<f64>()).sum::<f64>() / b,
            validation_return,
            mean_final_success: records.iter().map(|r| r.final_success()).sum::<f64>() / b,
            stats,
            class_stats: normalizer.stats.values().map(|s| (s.class, s.mean, s.normalized_mean)).collect(),
            env_steps: records.iter().map(|r| r.len()).sum(),
        };
        on_update(&row, &agent)?;
        log.push(row);
        update += 1;
        if tracker.observe(validation_return) {
            return Ok(MetaTrainResult { agent, log, stop: StopReason::Plateau, normalizer });
        }
        if cfg.meta.max_outer_updates.is_some_and(|m| update >= m) {
            return Ok(MetaTrainResult { agent, log, stop: StopReason::MaxUpdates, normalizer });
        }
    }
}
