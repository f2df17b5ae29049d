//! Flat `key = value` run configuration.
//!
//! Keys follow the hyperparameter tables: outer-loop keys are bare
//! (`ppo.k`, `ae.starting_n`, `meta_gamma`), inner-loop keys carry an
//! `inner.` prefix (`inner.ppo.update_epochs`). Step counts are written at
//! paper scale and multiplied by `scale` when the run is built. Unknown keys
//! and malformed values are configuration errors.

use crate::error::{Error, Result};
use metareward_core::baselines::Rl2Config;
use metareward_core::env::Benchmark;
use metareward_core::inner::PpoConfig;
use metareward_core::meta_agent::{MetaMode, RecurrentArch};
use metareward_core::outer::{AeConfig, MetaPpoConfig, MetaTrainConfig};
use metareward_core::Error as CoreError;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    /// Integer step count at paper scale.
    Steps,
    /// Float or `auto`.
    AutoFloat,
    /// Float or `None`.
    OptFloat,
    /// Integer or `None`.
    OptInt,
    /// Comma-separated positive integers.
    IntList,
    Choice(&'static [&'static str]),
}

struct Key {
    name: &'static str,
    default: &'static str,
    kind: Kind,
}

const fn key(name: &'static str, default: &'static str, kind: Kind) -> Key {
    Key { name, default, kind }
}

const BENCHMARKS: &[&str] = &["toy-ml1-reach", "toy-ml1-push", "toy-ml1-press", "toy-ml5"];
const ESTIMATION: &str = "bootstrapping skipping uninfluenced future rewards";

const KEYS: &[Key] = &[
    key("benchmark", "toy-ml1-reach", Kind::Choice(BENCHMARKS)),
    key("mode", "intrinsic", Kind::Choice(&["intrinsic", "advantage"])),
    key("seed", "0", Kind::Int),
    key("scale", "0.2", Kind::Float),
    key("threads", "0", Kind::Int),
    key("horizon", "500", Kind::Steps),
    // inner loop
    key("inner.total_timesteps", "6000", Kind::Steps),
    key("inner.num_steps", "2000", Kind::Steps),
    key("inner.num_updates", "2", Kind::Int),
    key("inner.num_deterministic_episodes", "2", Kind::Int),
    key("inner.learning_rate", "0.0003", Kind::Float),
    key("inner.adam_eps", "0.00001", Kind::Float),
    key("inner.gamma", "0.99", Kind::Float),
    key("inner.gae", "True", Kind::Bool),
    key("inner.gae_lambda", "0.95", Kind::Float),
    key("inner.ppo.update_epochs", "64", Kind::Int),
    key("inner.ppo.num_minibatches", "16", Kind::Int),
    key("inner.ppo.normalize_advantage", "True", Kind::Bool),
    key("inner.ppo.clip_coef", "0.2", Kind::Float),
    key("inner.ppo.entropy_coef", "0", Kind::Float),
    key("inner.ppo.valuef_coef", "0.5", Kind::Float),
    key("inner.ppo.clip_grad_norm", "True", Kind::Bool),
    key("inner.ppo.max_grad_norm", "0.5", Kind::Float),
    key("inner.ppo.target_KL", "None", Kind::Choice(&["None"])),
    key("inner.hidden_size", "64", Kind::Int),
    key("inner.initial_std", "0.6", Kind::Float),
    // outer loop
    key("num_epsiodes_of_validation", "4", Kind::Int),
    key("num_lifetimes_for_validation", "60", Kind::Int),
    key("num_inner_loops_per_update", "30", Kind::Int),
    key("learning_rate", "0.00005", Kind::Float),
    key("adam_eps", "0.00001", Kind::Float),
    key("e_rewards_target_mean", "0.0001", Kind::Float),
    key("meta_gamma", "0.9", Kind::Float),
    key("ae.estimation_method", ESTIMATION, Kind::Choice(&[ESTIMATION])),
    key("ae.bootstrapping_lambda", "0.85", Kind::Float),
    key("ae.starting_n", "2200", Kind::Steps),
    key("ae.num_n_step_estimates", "6", Kind::Int),
    key("ae.skip_rate", "300", Kind::Steps),
    key("rnn_input_size", "32", Kind::Int),
    key("rnn_type", "lstm", Kind::Choice(&["lstm"])),
    key("rnn_hidden_state_size", "128", Kind::Int),
    key("encoder_hidden_size", "128", Kind::Int),
    key("critic_hidden_size", "512", Kind::Int),
    key("std_hidden_size", "128", Kind::Int),
    key("mean_hidden_sizes", "128,128", Kind::IntList),
    key("initial_std", "auto", Kind::AutoFloat),
    key("ppo.k", "400", Kind::Steps),
    key("ppo.update_epochs", "12", Kind::Int),
    key("ppo.num_minibatches", "0", Kind::Int),
    key("ppo.normalize_advantage", "True", Kind::Bool),
    key("ppo.clip_coef", "0.2", Kind::Float),
    key("ppo.entropy_coef", "auto", Kind::AutoFloat),
    key("ppo.valuef_coef", "0.5", Kind::Float),
    key("ppo.clip_grad_norm", "True", Kind::Bool),
    key("ppo.max_grad_norm", "0.5", Kind::Float),
    key("ppo.target_KL", "0.01", Kind::OptFloat),
    key("plateau_patience", "200", Kind::Int),
    key("max_outer_updates", "None", Kind::OptInt),
    key("check_on_policy", "True", Kind::Bool),
    key("rl2.gamma", "0.99", Kind::Float),
    key("rl2.gae_lambda", "0.95", Kind::Float),
];

/// Keys left out of the configuration hash because they cannot change results.
const UNHASHED: &[&str] = &["threads"];

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Core(CoreError::config(msg))
}

fn canonical(kind: Kind, raw: &str) -> std::result::Result<String, String> {
    let v = raw.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`' || c == '‘' || c == '’');
    let float = |s: &str| s.parse::<f64>().ok().filter(|x| x.is_finite()).map(|x| format!("{x}"));
    let int = |s: &str| s.parse::<u64>().ok().map(|x| x.to_string());
    let out = match kind {
        Kind::Int | Kind::Steps => int(v),
        Kind::Float => float(v),
        Kind::Bool => match v {
            "True" | "true" => Some("True".into()),
            "False" | "false" => Some("False".into()),
            _ => None,
        },
        Kind::AutoFloat => if v == "auto" { Some("auto".into()) } else { float(v) },
        Kind::OptFloat => if v == "None" { Some("None".into()) } else { float(v) },
        Kind::OptInt => if v == "None" { Some("None".into()) } else { int(v) },
        Kind::IntList => {
            let parts: Option<Vec<String>> = v.split(',').map(|p| int(p.trim()).filter(|x| x != "0")).collect();
            parts.filter(|p| !p.is_empty()).map(|p| p.join(","))
        }
        Kind::Choice(opts) => opts.iter().find(|o| **o == v).map(|o| o.to_string()),
    };
    out.ok_or_else(|| match kind {
        Kind::Choice(opts) => format!("`{v}` is not one of {}", opts.join(", ")),
        _ => format!("`{v}` is not a valid {kind:?} value"),
    })
}

/// Effective configuration: defaults plus overrides, in canonical form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect() }
    }
}

impl RunConfig {
    /// Every known key, in table order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.name)
    }

    /// Applies one override.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let k = KEYS.iter().find(|k| k.name == name).ok_or_else(|| cfg_err(format!("unknown configuration key `{name}`")))?;
        let v = canonical(k.kind, value).map_err(|m| cfg_err(format!("{name}: {m}")))?;
        self.values.insert(k.name, v);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    /// Parses `key = value` lines onto the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| cfg_err(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if seen.insert(k.to_string(), n + 1).is_some() {
                return Err(cfg_err(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            cfg.set(k, v).map_err(|e| match e {
                Error::Core(c) => Error::Core(c.context(&format!("line {}", n + 1))),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Core(c) => Error::Core(c.context(&path.display().to_string())),
            other => other,
        })
    }

    /// All keys in table order, one `key = value` per line.
    pub fn serialize(&self) -> String {
        KEYS.iter().map(|k| format!("{} = {}\n", k.name, self.values[k.name])).collect()
    }

    /// SHA-256 of the serialised configuration without the thread cap.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for k in KEYS.iter().filter(|k| !UNHASHED.contains(&k.name)) {
            h.update(format!("{} = {}\n", k.name, self.values[k.name]).as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short form of [`RunConfig::hash`] for file names and headers.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    fn str(&self, name: &str) -> &str {
        &self.values[name]
    }

    fn int(&self, name: &str) -> usize {
        self.values[name].parse().expect("canonical integer")
    }

    fn float(&self, name: &str) -> f64 {
        self.values[name].parse().expect("canonical float")
    }

    fn flag(&self, name: &str) -> bool {
        self.values[name] == "True"
    }

    fn opt_float(&self, name: &str) -> Option<f64> {
        self.values[name].parse().ok()
    }

    fn auto_float(&self, name: &str) -> Option<f64> {
        self.values[name].parse().ok()
    }

    /// A step count scaled by `scale` and rounded.
    fn steps(&self, name: &str) -> Result<usize> {
        let s = self.float("scale");
        if !(s > 0.0) {
            return Err(cfg_err("scale must be positive"));
        }
        let v = (self.int(name) as f64 * s).round() as usize;
        if v == 0 {
            return Err(cfg_err(format!("{name} scales to zero steps")));
        }
        Ok(v)
    }

    pub fn benchmark(&self) -> Result<Benchmark> {
        Ok(Benchmark::parse(self.str("benchmark"))?)
    }

    pub fn mode(&self) -> Result<MetaMode> {
        Ok(MetaMode::parse(self.str("mode"))?)
    }

    pub fn seed(&self) -> u64 {
        self.values["seed"].parse().expect("canonical integer")
    }

    /// Thread cap, `None` meaning the environment decides.
    pub fn threads(&self) -> Option<usize> {
        Some(self.int("threads")).filter(|t| *t > 0)
    }

    pub fn inner(&self) -> Result<PpoConfig> {
        if !self.flag("inner.gae") {
            return Err(cfg_err("inner.gae = False is not supported"));
        }
        let horizon = self.steps("horizon")?;
        let total = self.steps("inner.total_timesteps")?;
        let num_steps = self.steps("inner.num_steps")?;
        let learning = num_steps * self.int("inner.num_updates");
        if total <= learning || !(total - learning).is_multiple_of(horizon) {
            return Err(cfg_err("inner.total_timesteps must exceed the learning steps by whole validation episodes"));
        }
        let validation = (total - learning) / horizon;
        let det = self.int("inner.num_deterministic_episodes");
        if det > validation {
            return Err(cfg_err("inner.num_deterministic_episodes exceeds the validation episodes"));
        }
        let init_std = self.float("inner.initial_std");
        if !(init_std > 0.0) {
            return Err(cfg_err("inner.initial_std must be positive"));
        }
        let cfg = PpoConfig {
            lr: self.float("inner.learning_rate"),
            adam_eps: self.float("inner.adam_eps"),
            gamma: self.float("inner.gamma"),
            gae_lambda: self.float("inner.gae_lambda"),
            update_epochs: self.int("inner.ppo.update_epochs"),
            num_minibatches: self.int("inner.ppo.num_minibatches"),
            clip_coef: self.float("inner.ppo.clip_coef"),
            entropy_coef: self.float("inner.ppo.entropy_coef"),
            value_coef: self.float("inner.ppo.valuef_coef"),
            max_grad_norm: if self.flag("inner.ppo.clip_grad_norm") { self.float("inner.ppo.max_grad_norm") } else { f64::INFINITY },
            normalize_advantage: self.flag("inner.ppo.normalize_advantage"),
            num_steps,
            learning_steps: learning,
            horizon,
            validation_stochastic: validation - det,
            validation_deterministic: det,
            hidden: self.int("inner.hidden_size"),
            init_log_std: init_std.ln(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn arch(&self) -> RecurrentArch {
        RecurrentArch {
            encoder: [self.int("encoder_hidden_size"), self.int("rnn_input_size")],
            hidden: self.int("rnn_hidden_state_size"),
            critic_width: self.int("critic_hidden_size"),
            std_width: self.int("std_hidden_size"),
            mean_widths: self.values["mean_hidden_sizes"].split(',').map(|p| p.parse().expect("canonical list")).collect(),
        }
    }

    pub fn meta_ppo(&self) -> Result<MetaPpoConfig> {
        let entropy = match self.auto_float("ppo.entropy_coef") {
            Some(e) => e,
            None if self.mode()? == MetaMode::Intrinsic && self.benchmark()? != Benchmark::Ml5 => 0.003,
            None => 0.0005,
        };
        let max_updates = self.values["max_outer_updates"].parse().ok();
        Ok(MetaPpoConfig {
            lr: self.float("learning_rate"),
            adam_eps: self.float("adam_eps"),
            num_inner_loops_per_update: self.int("num_inner_loops_per_update"),
            meta_gamma: self.float("meta_gamma"),
            k: self.steps("ppo.k")?,
            update_epochs: self.int("ppo.update_epochs"),
            num_minibatches: self.int("ppo.num_minibatches"),
            clip_coef: self.float("ppo.clip_coef"),
            entropy_coef: entropy,
            value_coef: self.float("ppo.valuef_coef"),
            max_grad_norm: if self.flag("ppo.clip_grad_norm") { self.float("ppo.max_grad_norm") } else { f64::INFINITY },
            target_kl: self.opt_float("ppo.target_KL"),
            normalize_advantage: self.flag("ppo.normalize_advantage"),
            e_rewards_target_mean: self.float("e_rewards_target_mean"),
            num_lifetimes_for_validation: self.int("num_lifetimes_for_validation"),
            num_episodes_of_validation: self.int("num_epsiodes_of_validation"),
            plateau_patience: self.int("plateau_patience"),
            max_outer_updates: max_updates,
            check_on_policy: self.flag("check_on_policy"),
        })
    }

    pub fn ae(&self) -> Result<AeConfig> {
        Ok(AeConfig {
            bootstrapping_lambda: self.float("ae.bootstrapping_lambda"),
            starting_n: self.steps("ae.starting_n")?,
            num_n_step_estimates: self.int("ae.num_n_step_estimates"),
            skip_rate: self.steps("ae.skip_rate")?,
        })
    }

    pub fn meta_train(&self) -> Result<MetaTrainConfig> {
        let mode = self.mode()?;
        let cfg = MetaTrainConfig {
            benchmark: self.benchmark()?,
            mode,
            seed: self.seed(),
            inner: self.inner()?,
            meta: self.meta_ppo()?,
            ae: self.ae()?,
            arch: self.arch(),
            initial_std: self.auto_float("initial_std").unwrap_or(mode.default_initial_std()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rl2(&self) -> Result<Rl2Config> {
        let inner = self.inner()?;
        let meta = self.meta_ppo()?;
        meta.validate(inner.lifetime_steps())?;
        Ok(Rl2Config {
            benchmark: self.benchmark()?,
            seed: self.seed(),
            initial_std: self.float("inner.initial_std"),
            inner,
            meta: MetaPpoConfig { entropy_coef: self.auto_float("ppo.entropy_coef").unwrap_or(0.0005), ..meta },
            arch: self.arch(),
            gamma: self.float("rl2.gamma"),
            gae_lambda: self.float("rl2.gae_lambda"),
        })
    }
}
