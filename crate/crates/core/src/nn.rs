//! Network building blocks on top of [`Graph`]: orthogonal initialisation,
//! affine layers, tanh MLPs, an LSTM cell and diagonal Gaussian heads.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::rng::{normal, Rng};
use crate::tensor::{ParamId, ParamSet, Tensor};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Random matrix with orthonormal rows (`rows <= cols`) or orthonormal
/// columns (`rows > cols`), scaled by `gain`.
pub fn orthogonal_init(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Tensor {
    assert!(rows >= 1 && cols >= 1, "orthogonal_init needs a non-empty shape");
    let (n, k) = if rows <= cols { (cols, rows) } else { (rows, cols) };
    // k Gaussian columns of length n, orthonormalised with two Gram-Schmidt passes.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    while q.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        for _ in 0..2 {
            for prev in &q {
                let p = math::dot(prev, &v);
                math::axpy(&mut v, prev, -p);
            }
        }
        let norm = math::sqrt(math::dot(&v, &v));
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    let mut m = Tensor::zeros(rows, cols);
    for (j, col) in q.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            if rows <= cols {
                m.set(j, i, gain * v);
            } else {
                m.set(i, j, gain * v);
            }
        }
    }
    m
}

/// `y = x W^T + b` with `W: out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, gain: f64, rng: &mut Rng) -> Self {
        let w = params.add(format!("{name}.weight"), orthogonal_init(out_dim, in_dim, gain, rng));
        let b = params.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.affine(x, w, b)
    }
}

/// Activation applied after the last layer of an [`Mlp`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputActivation {
    Identity,
    /// `scale * tanh(z)`
    Tanh { scale: f64 },
}

/// Layer widths including the input and output widths. Hidden layers use tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub output: OutputActivation,
}

impl MlpSpec {
    pub fn new(widths: &[usize], output: OutputActivation) -> Self {
        MlpSpec { widths: widths.to_vec(), output }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::config(format!("invalid MLP widths {:?}", self.widths)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Orthogonal weights with `hidden_gain` on hidden layers and
    /// `output_gain` on the last one; zero biases.
    pub fn new(
        spec: MlpSpec,
        params: &mut ParamSet,
        prefix: &str,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let n = spec.widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { output_gain } else { hidden_gain };
                Linear::new(params, &format!("{prefix}.{i}"), spec.widths[i], spec.widths[i + 1], gain, rng)
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let (_, cols) = g.shape(x);
        if cols != self.spec.input_dim() {
            return Err(Error::config(format!(
                "MLP expects input width {}, got {cols}",
                self.spec.input_dim()
            )));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i + 1 < self.layers.len() {
                h = g.tanh(h);
            }
        }
        Ok(match self.spec.output {
            OutputActivation::Identity => h,
            OutputActivation::Tanh { scale } => {
                let t = g.tanh(h);
                if scale == 1.0 {
                    t
                } else {
                    g.scale(t, scale)
                }
            }
        })
    }
}

/// Runs `mlp` on one input row and returns the output node.
pub fn mlp_forward(mlp: &Mlp, g: &mut Graph, input: &[f64]) -> Result<NodeId> {
    if input.len() != mlp.spec.input_dim() {
        return Err(Error::config(format!(
            "MLP expects input width {}, got {}",
            mlp.spec.input_dim(),
            input.len()
        )));
    }
    let x = g.input(Tensor::row_vector(input));
    mlp.forward(g, x)
}

/// Single-layer LSTM cell with PyTorch gate order (input, forget, cell, output)
/// and one fused weight `W: 4H x (in + H)` acting on `[x, h]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w = params.add(format!("{name}.weight"), orthogonal_init(4 * hidden, input + hidden, 1.0, rng));
        let b = params.add(format!("{name}.bias"), Tensor::zeros(1, 4 * hidden));
        LstmCell { w, b, input, hidden }
    }

    /// One recurrence step; returns the new `(h, c)`.
    pub fn step(&self, g: &mut Graph, x: NodeId, h: NodeId, c: NodeId) -> (NodeId, NodeId) {
        let hd = self.hidden;
        let xh = g.concat_cols(&[x, h]);
        let (w, b) = (g.param(self.w), g.param(self.b));
        let z = g.affine(xh, w, b);
        let zi = g.slice_cols(z, 0, hd);
        let zf = g.slice_cols(z, hd, hd);
        let zg = g.slice_cols(z, 2 * hd, hd);
        let zo = g.slice_cols(z, 3 * hd, hd);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let gg = g.tanh(zg);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, c);
        let ig = g.mul(i, gg);
        let c_new = g.add(fc, ig);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }
}

/// Hidden and cell vectors of a single-layer LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| v.is_finite())
    }
}

/// One LSTM step on concrete values. The returned features are the new hidden state.
pub fn recurrent_step(cell: &LstmCell, params: &ParamSet, input: &[f64], state: &LstmState) -> Result<(Vec<f64>, LstmState)> {
    if state.h.len() != cell.hidden || state.c.len() != cell.hidden {
        return Err(Error::config(format!("LSTM state must have size {}", cell.hidden)));
    }
    if input.len() != cell.input {
        return Err(Error::config(format!("LSTM expects input width {}, got {}", cell.input, input.len())));
    }
    if !state.is_finite() {
        return Err(Error::numeric("non-finite LSTM state"));
    }
    let mut g = Graph::new(params);
    let x = g.input(Tensor::row_vector(input));
    let h = g.input(Tensor::row_vector(&state.h));
    let c = g.input(Tensor::row_vector(&state.c));
    let (h2, c2) = cell.step(&mut g, x, h, c);
    let next = LstmState { h: g.value(h2).data().to_vec(), c: g.value(c2).data().to_vec() };
    if !next.is_finite() {
        return Err(Error::numeric("LSTM produced a non-finite state"));
    }
    Ok((next.h.clone(), next))
}

/// A concrete diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianHead {
    pub fn log_density(&self, value: &[f64]) -> Result<f64> {
        gaussian_log_density(self, value)
    }
}

/// Sum over dimensions of univariate normal log-densities.
pub fn gaussian_log_density(head: &GaussianHead, value: &[f64]) -> Result<f64> {
    if head.mean.len() != value.len() || head.std.len() != value.len() {
        return Err(Error::config("Gaussian head and value dimensions differ"));
    }
    let mut lp = 0.0;
    for ((mu, sd), x) in head.mean.iter().zip(&head.std).zip(value) {
        if !(*sd > 0.0) {
            return Err(Error::numeric(format!("Gaussian std must be positive, got {sd}")));
        }
        let ls = math::log(*sd);
        let z = (x - mu) * math::exp(-ls);
        lp += -0.5 * z * z - ls - 0.5 * math::LN_2PI;
    }
    Ok(lp)
}

/// Entropy of a diagonal Gaussian given its log-stds.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + math::LN_2PI)).sum()
}

/// Parameter names, handy for diagnostics.
pub fn param_names(params: &ParamSet) -> Vec<String> {
    params.iter().map(|(_, t)| t.name.clone()).collect()
}
