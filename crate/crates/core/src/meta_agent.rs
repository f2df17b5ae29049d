//! The recurrent stochastic signal generator.
//!
//! At every inner-loop step the meta-agent reads the transition tuple
//! (observation, action, the action's log-density under the inner policy,
//! sparse extrinsic reward, its own previous signal and that signal's
//! log-density, episode-start flag) and emits a Gaussian-distributed signal
//! together with an outer critic value. Its recurrent state lives for a whole
//! lifetime and is never reset at episode boundaries.

use crate::env::{ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::inner::{LifetimeRecord, MetaInput, MetaTrace, SignalGenerator, SignalOutput};
use crate::math;
use crate::nn::LstmState;
use crate::recurrent::{flatten_state, RecurrentNet, RecurrentSpec};
use crate::rng::{normal, Rng};
use crate::tensor::{ParamSet, Tensor};
use alloc::vec;
use alloc::vec::Vec;

/// Width of the vector part of the input (observation and action).
pub const META_VEC_DIM: usize = OBS_DIM + ACT_DIM;
/// Scalar features: policy log-density, sparse reward, previous signal,
/// previous signal log-density, episode-start flag.
pub const META_SCALARS: usize = 5;
/// Bound applied to the policy log-density feature.
pub const LOG_PROB_CLAMP: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetaMode {
    /// Signals replace the inner loop's rewards.
    Intrinsic,
    /// Signals are the inner loop's advantages.
    Advantage,
}

impl MetaMode {
    pub fn id(self) -> &'static str {
        match self {
            MetaMode::Intrinsic => "intrinsic",
            MetaMode::Advantage => "advantage",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "intrinsic" => Ok(MetaMode::Intrinsic),
            "advantage" => Ok(MetaMode::Advantage),
            _ => Err(Error::config(alloc::format!("unknown meta mode '{s}'"))),
        }
    }

    /// Saturation bound of the signal mean.
    pub fn range(self) -> f64 {
        match self {
            MetaMode::Intrinsic => 1.0,
            MetaMode::Advantage => 3.0,
        }
    }

    pub fn default_initial_std(self) -> f64 {
        match self {
            MetaMode::Intrinsic => 0.2,
            MetaMode::Advantage => 1.0,
        }
    }
}

/// Layer widths of the recurrent network.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentArch {
    pub encoder: [usize; 2],
    pub hidden: usize,
    pub critic_width: usize,
    pub std_width: usize,
    pub mean_widths: Vec<usize>,
}

impl Default for RecurrentArch {
    fn default() -> Self {
        RecurrentArch { encoder: [128, 32], hidden: 128, critic_width: 512, std_width: 128, mean_widths: vec![128, 128] }
    }
}

impl RecurrentArch {
    pub fn spec(&self, vec_dim: usize, n_scalars: usize, out_dim: usize, out_range: f64, initial_std: f64) -> RecurrentSpec {
        RecurrentSpec {
            vec_dim,
            n_scalars,
            encoder: self.encoder,
            hidden: self.hidden,
            critic_width: self.critic_width,
            std_width: self.std_width,
            mean_widths: self.mean_widths.clone(),
            out_dim,
            out_range,
            initial_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaAgent {
    pub mode: MetaMode,
    pub net: RecurrentNet,
    pub params: ParamSet,
}

/// Recurrent state plus the number of steps taken this lifetime.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaAgentState {
    pub lstm: LstmState,
    pub steps: usize,
}

/// Output of [`MetaAgent::signal_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct SignalStep {
    pub value: f64,
    pub log_prob: f64,
    pub outer_value: f64,
    pub mean: f64,
    pub std: f64,
    pub state: MetaAgentState,
    pub std_clamped: bool,
}

/// Splits a transition tuple into the vector input and the scalar features.
pub fn input_features(raw: &MetaInput) -> ([f64; META_VEC_DIM], [f64; META_SCALARS]) {
    let mut v = [0.0; META_VEC_DIM];
    v[..OBS_DIM].copy_from_slice(&raw.obs);
    v[OBS_DIM..].copy_from_slice(&raw.action);
    let s = [
        raw.policy_log_prob.clamp(-LOG_PROB_CLAMP, LOG_PROB_CLAMP),
        raw.sparse_reward,
        raw.prev_signal,
        raw.prev_signal_log_prob,
        if raw.episode_start { 1.0 } else { 0.0 },
    ];
    (v, s)
}

impl MetaAgent {
    pub fn new(mode: MetaMode, arch: &RecurrentArch, initial_std: f64, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let spec = arch.spec(META_VEC_DIM, META_SCALARS, 1, mode.range(), initial_std);
        let net = RecurrentNet::new(spec, &mut params, "meta", rng)?;
        Ok(MetaAgent { mode, net, params })
    }

    pub fn initial_state(&self) -> MetaAgentState {
        MetaAgentState { lstm: LstmState::zeros(self.net.spec.hidden), steps: 0 }
    }

    /// Output of the two encoder layers for one tuple.
    pub fn encode_input(&self, raw: &MetaInput) -> Result<Vec<f64>> {
        let (v, s) = input_features(raw);
        if !s.iter().chain(&v).all(|x| x.is_finite()) {
            return Err(Error::numeric("meta-agent input is not finite"));
        }
        let mut g = Graph::new(&self.params);
        let vi = g.input(Tensor::row_vector(&v));
        let si = g.input(Tensor::row_vector(&s));
        let e = self.net.encode(&mut g, vi, si);
        Ok(g.value(e).row(0).to_vec())
    }

    /// Emits one signal: a sample from the Gaussian head, or its mean when
    /// `deterministic`. The log-density is of the returned value.
    pub fn signal_step(&self, state: &MetaAgentState, raw: &MetaInput, deterministic: bool, rng: &mut Rng) -> Result<SignalStep> {
        let (v, s) = input_features(raw);
        if !s.iter().chain(&v).all(|x| x.is_finite()) {
            return Err(Error::numeric("meta-agent input is not finite"));
        }
        let (mut g, nodes, out) = self.net.step_values(&self.params, &v, &s, &state.lstm)?;
        let mean = out.mean[0];
        let std = math::exp(out.log_std[0]);
        let value = if deterministic { mean } else { mean + std * normal(rng) };
        let lp = g.gaussian_log_density(nodes.mean, nodes.log_std, Tensor::scalar(value));
        let log_prob = g.value(lp).item();
        if !log_prob.is_finite() {
            return Err(Error::numeric("signal log-density is not finite"));
        }
        Ok(SignalStep {
            value,
            log_prob,
            outer_value: out.value,
            mean,
            std,
            state: MetaAgentState { lstm: out.state, steps: state.steps + 1 },
            std_clamped: out.std_clamps > 0,
        })
    }

    /// Starts a lifetime-long signal session.
    pub fn session(&self, deterministic: bool, checkpoint_every: usize, rng: Rng) -> MetaSession<'_> {
        MetaSession {
            agent: self,
            state: self.initial_state(),
            deterministic,
            rng,
            trace: MetaTrace { checkpoint_every: checkpoint_every.max(1), ..MetaTrace::default() },
        }
    }
}

/// A meta-agent attached to one lifetime; records everything it emits.
pub struct MetaSession<'a> {
    agent: &'a MetaAgent,
    state: MetaAgentState,
    deterministic: bool,
    rng: Rng,
    trace: MetaTrace,
}

impl MetaSession<'_> {
    pub fn steps(&self) -> usize {
        self.state.steps
    }
}

impl SignalGenerator for MetaSession<'_> {
    fn emit(&mut self, input: &MetaInput) -> Result<SignalOutput> {
        if self.state.steps != self.trace.signals.len() {
            return Err(Error::internal("meta-agent state is out of sync with the lifetime"));
        }
        if self.state.steps.is_multiple_of(self.trace.checkpoint_every) {
            self.trace.checkpoints.push(flatten_state(&self.state.lstm));
        }
        let out = self.agent.signal_step(&self.state, input, self.deterministic, &mut self.rng)?;
        self.trace.signals.push(out.value);
        self.trace.log_probs.push(out.log_prob);
        self.trace.outer_values.push(out.outer_value);
        self.trace.std_clamps += out.std_clamped as u64;
        self.state = out.state;
        Ok(SignalOutput { value: out.value, log_prob: out.log_prob, outer_value: out.outer_value })
    }

    fn take_trace(&mut self) -> Option<MetaTrace> {
        Some(core::mem::take(&mut self.trace))
    }
}

/// Rebuilds the inputs the meta-agent saw at every step of `record`.
pub fn replay_inputs(record: &LifetimeRecord) -> Result<Vec<MetaInput>> {
    let trace = record.meta.as_ref().ok_or_else(|| Error::usage("lifetime has no meta-agent trace"))?;
    if trace.signals.len() != record.transitions.len() {
        return Err(Error::internal("meta trace and transitions differ in length"));
    }
    Ok(record
        .transitions
        .iter()
        .enumerate()
        .map(|(t, tr)| MetaInput {
            obs: tr.obs,
            action: tr.action,
            policy_log_prob: tr.log_prob,
            sparse_reward: tr.sparse_reward,
            prev_signal: if t == 0 { 0.0 } else { trace.signals[t - 1] },
            prev_signal_log_prob: if t == 0 { 0.0 } else { trace.log_probs[t - 1] },
            episode_start: tr.episode_start,
        })
        .collect())
}
