//! Central finite-difference verification of reverse-mode gradients.
//!
//! This is an oracle for tests and acceptance runs. It only ever calls the
//! loss as a black box on perturbed parameter copies.

use crate::rng::SeedTree;
use crate::tensor::{Gradients, ParamSet};
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::index::sample;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
    /// Check at most this many entries per tensor (all entries if `None`).
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-5, rel_tol: 1e-4, abs_floor: 1e-8, max_per_tensor: None, seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub failures: Vec<(String, usize, f64, f64)>,
    pub max_rel_err: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }
}

/// Whether `analytic` agrees with `numeric` per component.
pub fn agrees(analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel_tol * analytic.abs().max(numeric.abs())
}

/// Compares the gradient returned by `loss` with central differences of its
/// value. `loss` must be a pure function of the parameters.
pub fn check_gradients<F>(params: &ParamSet, loss: F, cfg: &GradCheck) -> GradReport
where
    F: Fn(&ParamSet) -> (f64, Gradients),
{
    let (_, grads) = loss(params);
    let mut probe = params.clone();
    let mut report = GradReport::default();
    let mut rng = SeedTree::new(cfg.seed).stream("gradcheck");
    for (id, t) in params.iter() {
        let n = t.value.len();
        let idx: Vec<usize> = match cfg.max_per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in idx {
            let orig = t.value.data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + cfg.step;
            let up = loss(&probe).0;
            probe.get_mut(id).value.data_mut()[i] = orig - cfg.step;
            let down = loss(&probe).0;
            probe.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let analytic = grads.get(id).map(|g| g.data()[i]).unwrap_or(0.0);
            report.checked += 1;
            let diff = (analytic - numeric).abs();
            if diff > cfg.abs_floor {
                let rel = diff / analytic.abs().max(numeric.abs());
                report.max_rel_err = report.max_rel_err.max(rel);
            }
            if !agrees(analytic, numeric, cfg.rel_tol, cfg.abs_floor) {
                report.failures.push((t.name.clone(), i, analytic, numeric));
            }
        }
    }
    report
}
