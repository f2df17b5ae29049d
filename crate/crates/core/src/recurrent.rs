//! Recurrent Gaussian network shared by the meta-agent and the RL² policy.
//!
//! Per step: a two-layer tanh encoder (scalar features are concatenated to
//! the input of both layers), an LSTM core, and three heads on the hidden
//! state: a saturating mean head, a log-std head and a critic head.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::nn::{Linear, LstmCell, LstmState, Mlp, MlpSpec, OutputActivation};
use crate::rng::Rng;
use crate::tensor::{ParamSet, Tensor};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Smallest output std; smaller values are clamped.
pub const MIN_STD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentSpec {
    /// Width of the vector input (observation and action).
    pub vec_dim: usize,
    /// Number of scalar features concatenated at both encoder layers.
    pub n_scalars: usize,
    pub encoder: [usize; 2],
    pub hidden: usize,
    pub critic_width: usize,
    pub std_width: usize,
    pub mean_widths: Vec<usize>,
    pub out_dim: usize,
    /// Mean head output is `out_range * tanh(z)`.
    pub out_range: f64,
    pub initial_std: f64,
}

impl RecurrentSpec {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.vec_dim, self.encoder[0], self.encoder[1], self.hidden, self.critic_width, self.std_width, self.out_dim];
        if widths.contains(&0) || self.mean_widths.contains(&0) {
            return Err(Error::config("recurrent network widths must be positive"));
        }
        if !(self.out_range > 0.0 && self.initial_std > 0.0) {
            return Err(Error::config("output range and initial std must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentNet {
    pub spec: RecurrentSpec,
    pub enc1: Linear,
    pub enc2: Linear,
    pub cell: LstmCell,
    pub mean_head: Mlp,
    pub std_head: Mlp,
    pub critic: Mlp,
}

/// Nodes produced by one batched step.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub mean: NodeId,
    pub log_std: NodeId,
    pub value: NodeId,
    pub h: NodeId,
    pub c: NodeId,
}

/// Concrete outputs of one single-sample step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepValues {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
    pub state: LstmState,
    /// Output dimensions whose std hit [`MIN_STD`].
    pub std_clamps: u32,
}

impl RecurrentNet {
    pub fn new(spec: RecurrentSpec, params: &mut ParamSet, prefix: &str, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let g = math::sqrt(2.0);
        let s = &spec;
        let enc1 = Linear::new(params, &format!("{prefix}.enc1"), s.vec_dim + s.n_scalars, s.encoder[0], g, rng);
        let enc2 = Linear::new(params, &format!("{prefix}.enc2"), s.encoder[0] + s.n_scalars, s.encoder[1], g, rng);
        let cell = LstmCell::new(params, &format!("{prefix}.lstm"), s.encoder[1], s.hidden, rng);
        let mut mw = vec![s.hidden];
        mw.extend_from_slice(&s.mean_widths);
        mw.push(s.out_dim);
        let mean_head = Mlp::new(
            MlpSpec::new(&mw, OutputActivation::Tanh { scale: s.out_range }),
            params,
            &format!("{prefix}.mean"),
            g,
            0.01,
            rng,
        )?;
        let std_head = Mlp::new(
            MlpSpec::new(&[s.hidden, s.std_width, s.out_dim], OutputActivation::Identity),
            params,
            &format!("{prefix}.log_std"),
            g,
            0.01,
            rng,
        )?;
        let last = std_head.layers.last().expect("std head has layers").b;
        params.get_mut(last).value = Tensor::filled(1, s.out_dim, math::log(s.initial_std));
        let critic = Mlp::new(
            MlpSpec::new(&[s.hidden, s.critic_width, 1], OutputActivation::Identity),
            params,
            &format!("{prefix}.critic"),
            g,
            1.0,
            rng,
        )?;
        Ok(RecurrentNet { spec, enc1, enc2, cell, mean_head, std_head, critic })
    }

    /// Encoder output for a batch: `vec_in` is `B x vec_dim`, `scalars` is `B x n_scalars`.
    pub fn encode(&self, g: &mut Graph, vec_in: NodeId, scalars: NodeId) -> NodeId {
        let x1 = g.concat_cols(&[vec_in, scalars]);
        let h1 = self.enc1.forward(g, x1);
        let h1 = g.tanh(h1);
        let x2 = g.concat_cols(&[h1, scalars]);
        let h2 = self.enc2.forward(g, x2);
        g.tanh(h2)
    }

    /// One batched step from state `(h, c)`.
    pub fn step(&self, g: &mut Graph, vec_in: NodeId, scalars: NodeId, h: NodeId, c: NodeId) -> Result<StepNodes> {
        let e = self.encode(g, vec_in, scalars);
        let (h, c) = self.cell.step(g, e, h, c);
        let mean = self.mean_head.forward(g, h)?;
        let raw = self.std_head.forward(g, h)?;
        let log_std = g.clamp(raw, math::log(MIN_STD), f64::INFINITY);
        let value = self.critic.forward(g, h)?;
        Ok(StepNodes { mean, log_std, value, h, c })
    }

    /// Single-sample step on concrete values. Returns the graph too so the
    /// caller can score a sampled value with the same kernels as training.
    pub fn step_values<'p>(
        &self,
        params: &'p ParamSet,
        vec_in: &[f64],
        scalars: &[f64],
        state: &LstmState,
    ) -> Result<(Graph<'p>, StepNodes, StepValues)> {
        let s = &self.spec;
        if vec_in.len() != s.vec_dim || scalars.len() != s.n_scalars {
            return Err(Error::config(format!(
                "recurrent input expects {} + {} features, got {} + {}",
                s.vec_dim,
                s.n_scalars,
                vec_in.len(),
                scalars.len()
            )));
        }
        if state.h.len() != s.hidden || state.c.len() != s.hidden {
            return Err(Error::config("recurrent state has the wrong width"));
        }
        if !state.is_finite() {
            return Err(Error::numeric("recurrent state is not finite"));
        }
        let mut g = Graph::new(params);
        let v = g.input(Tensor::row_vector(vec_in));
        let sc = g.input(Tensor::row_vector(scalars));
        let h = g.input(Tensor::row_vector(&state.h));
        let c = g.input(Tensor::row_vector(&state.c));
        let nodes = self.step(&mut g, v, sc, h, c)?;
        let raw_min = math::log(MIN_STD);
        let log_std = g.value(nodes.log_std).row(0).to_vec();
        let std_clamps = log_std.iter().filter(|l| **l <= raw_min).count() as u32;
        let values = StepValues {
            mean: g.value(nodes.mean).row(0).to_vec(),
            log_std,
            value: g.value(nodes.value).item(),
            state: LstmState { h: g.value(nodes.h).row(0).to_vec(), c: g.value(nodes.c).row(0).to_vec() },
            std_clamps,
        };
        if !(values.state.is_finite() && values.value.is_finite() && values.mean.iter().all(|m| m.is_finite())) {
            return Err(Error::numeric("recurrent network produced non-finite outputs"));
        }
        Ok((g, nodes, values))
    }
}

/// Flattens a state as `h` followed by `c`.
pub fn flatten_state(s: &LstmState) -> Vec<f64> {
    let mut v = s.h.clone();
    v.extend_from_slice(&s.c);
    v
}

pub fn unflatten_state(v: &[f64]) -> LstmState {
    let n = v.len() / 2;
    LstmState { h: v[..n].to_vec(), c: v[n..].to_vec() }
}
