//! Numerics, task distributions and learners for meta-learning the training
//! signal of a reinforcement-learning agent.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! the file system, threads or the command line lives in the companion
//! `metareward` crate.
//!
//! Layout:
//!
//! * [`graph`], [`nn`], [`optim`]: define-by-run reverse-mode autodiff over
//!   dense row-major matrices, MLP/LSTM building blocks, Adam.
//! * [`env`]: point-mass task distributions with shaped and sparse rewards.
//! * [`inner`]: the per-task PPO learner and the lifetime driver.
//! * [`recurrent`], [`meta_agent`]: the recurrent Gaussian signal generator.
//! * [`outer`]: meta-advantage estimation and truncated-BPTT PPO over lifetimes.
//! * [`baselines`]: extrinsic-reward learners and an RL² policy.
//! * [`eval`]: evaluation protocol and success curves.
//! * [`rng`], [`exec`]: counter-based seeding and the executor abstraction.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod baselines;
pub mod env;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod inner;
pub mod math;
pub mod meta_agent;
pub mod nn;
pub mod optim;
pub mod outer;
pub mod recurrent;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::{ParamId, ParamSet, ParamTensor, Tensor};
