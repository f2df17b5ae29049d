//! Point-mass manipulation task distributions.
//!
//! A point agent with double-integrator dynamics moves in the arena
//! `[-1, 1]^2` and may push a single object. Tasks come in classes (reach,
//! push, press-and-hold, ...) and each class samples its parametric variation
//! (goal, object and start placement) from a fixed region:
//!
//! | class                | agent start         | object start                  | target                            |
//! |----------------------|---------------------|-------------------------------|-----------------------------------|
//! | `reach`              | origin              | zeroed, inert                 | goal in `[0.2,0.4] x [0.2,0.4]`   |
//! | `push`               | origin              | `[0.15,0.25] x [-0.05,0.05]`  | goal in `[0.45,0.6] x [-0.1,0.1]` |
//! | `press-hold`         | origin              | zeroed, inert                 | button in `[-0.1,0.1] x [0.35,0.5]`, reached at rest |
//! | `reach-moving-start` | `[-0.3,-0.1]^2`     | zeroed, inert                 | goal in `[0.2,0.4] x [0.2,0.4]`   |
//! | `push-reverse`       | origin              | `[-0.25,-0.15] x [-0.05,0.05]`| goal in `[-0.6,-0.45] x [-0.1,0.1]` |
//!
//! Every reset adds uniform noise in `[-0.05, 0.05]` to the agent start. The
//! goal is never part of the observation.

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{uniform, Rng, SeedTree};
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use rand::Rng as _;

pub const OBS_DIM: usize = 12;
pub const ACT_DIM: usize = 2;
/// Per-step scale of both integrator updates.
pub const DT: f64 = 0.1;
pub const MAX_SPEED: f64 = 0.5;
pub const SUCCESS_RADIUS: f64 = 0.05;
pub const RESET_NOISE: f64 = 0.05;
pub const CONTACT_RADIUS: f64 = 0.1;
pub const SHAPING_COEF: f64 = 10.0;
pub const SUCCESS_BONUS: f64 = 1.0;
pub const POOL_SIZE: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskClass {
    Reach,
    Push,
    PressHold,
    ReachMovingStart,
    PushReverse,
}

impl TaskClass {
    pub const ALL: [TaskClass; 5] =
        [TaskClass::Reach, TaskClass::Push, TaskClass::PressHold, TaskClass::ReachMovingStart, TaskClass::PushReverse];

    pub fn id(self) -> &'static str {
        match self {
            TaskClass::Reach => "reach",
            TaskClass::Push => "push",
            TaskClass::PressHold => "press-hold",
            TaskClass::ReachMovingStart => "reach-moving-start",
            TaskClass::PushReverse => "push-reverse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        TaskClass::ALL
            .into_iter()
            .find(|c| c.id() == s)
            .ok_or_else(|| Error::config(format!("unknown task class '{s}'")))
    }

    fn pushes_object(self) -> bool {
        matches!(self, TaskClass::Push | TaskClass::PushReverse)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn id(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split '{s}'"))),
        }
    }
}

/// A task distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Benchmark {
    Ml1Reach,
    Ml1Push,
    Ml1Press,
    /// Three training classes and two held-out classes.
    Ml5,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [Benchmark::Ml1Reach, Benchmark::Ml1Push, Benchmark::Ml1Press, Benchmark::Ml5];

    pub fn id(self) -> &'static str {
        match self {
            Benchmark::Ml1Reach => "toy-ml1-reach",
            Benchmark::Ml1Push => "toy-ml1-push",
            Benchmark::Ml1Press => "toy-ml1-press",
            Benchmark::Ml5 => "toy-ml5",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.id() == s)
            .ok_or_else(|| Error::config(format!("unknown benchmark '{s}'")))
    }

    pub fn classes(self, split: Split) -> &'static [TaskClass] {
        match (self, split) {
            (Benchmark::Ml1Reach, _) => &[TaskClass::Reach],
            (Benchmark::Ml1Push, _) => &[TaskClass::Push],
            (Benchmark::Ml1Press, _) => &[TaskClass::PressHold],
            (Benchmark::Ml5, Split::Train) => &[TaskClass::Reach, TaskClass::Push, TaskClass::PressHold],
            (Benchmark::Ml5, Split::Test) => &[TaskClass::ReachMovingStart, TaskClass::PushReverse],
        }
    }

    pub fn all_classes(self) -> Vec<TaskClass> {
        let mut v: Vec<TaskClass> = self.classes(Split::Train).to_vec();
        for c in self.classes(Split::Test) {
            if !v.contains(c) {
                v.push(*c);
            }
        }
        v
    }
}

/// Parametric variation of a task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variation {
    pub goal: [f64; 2],
    pub object: [f64; 2],
    pub start: [f64; 2],
}

/// One task: a class, its variation, and where the variation came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskSpec {
    pub class: TaskClass,
    pub variation: Variation,
    pub split: Split,
    /// Index of the variation inside its pool.
    pub index: usize,
}

type Box2 = ([f64; 2], [f64; 2]);

fn sample_in(rng: &mut Rng, b: Box2) -> [f64; 2] {
    [uniform(rng, b.0[0], b.1[0]), uniform(rng, b.0[1], b.1[1])]
}

const REACH_GOAL: Box2 = ([0.2, 0.2], [0.4, 0.4]);

fn sample_variation(class: TaskClass, rng: &mut Rng) -> Variation {
    let zero = [0.0, 0.0];
    match class {
        TaskClass::Reach => Variation { goal: sample_in(rng, REACH_GOAL), object: zero, start: zero },
        TaskClass::ReachMovingStart => {
            let goal = sample_in(rng, REACH_GOAL);
            let start = sample_in(rng, ([-0.3, -0.3], [-0.1, -0.1]));
            Variation { goal, object: zero, start }
        }
        TaskClass::Push => {
            let object = sample_in(rng, ([0.15, -0.05], [0.25, 0.05]));
            let goal = sample_in(rng, ([0.45, -0.1], [0.6, 0.1]));
            Variation { goal, object, start: zero }
        }
        TaskClass::PushReverse => {
            let object = sample_in(rng, ([-0.25, -0.05], [-0.15, 0.05]));
            let goal = sample_in(rng, ([-0.6, -0.1], [-0.45, 0.1]));
            Variation { goal, object, start: zero }
        }
        TaskClass::PressHold => Variation { goal: sample_in(rng, ([-0.1, 0.35], [0.1, 0.5])), object: zero, start: zero },
    }
}

/// Train and test variation pools of every class of a benchmark, fully
/// determined by the benchmark and its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPools {
    pub benchmark: Benchmark,
    pub seed: u64,
    pools: BTreeMap<(TaskClass, Split), Vec<Variation>>,
}

impl TaskPools {
    pub fn build(benchmark: Benchmark, seed: u64) -> Self {
        let tree = SeedTree::new(seed);
        let mut pools = BTreeMap::new();
        for class in benchmark.all_classes() {
            let mut rng = tree.stream(&format!("pools/{}/{}", benchmark.id(), class.id()));
            let mut drawn: Vec<Variation> = Vec::with_capacity(2 * POOL_SIZE);
            while drawn.len() < 2 * POOL_SIZE {
                let v = sample_variation(class, &mut rng);
                if !drawn.contains(&v) {
                    drawn.push(v);
                }
            }
            let test = drawn.split_off(POOL_SIZE);
            pools.insert((class, Split::Train), drawn);
            pools.insert((class, Split::Test), test);
        }
        TaskPools { benchmark, seed, pools }
    }

    pub fn pool(&self, class: TaskClass, split: Split) -> &[Variation] {
        self.pools.get(&(class, split)).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Every task of a split in canonical order (class order, then pool index).
    pub fn tasks(&self, split: Split) -> Vec<TaskSpec> {
        self.benchmark
            .classes(split)
            .iter()
            .flat_map(|c| {
                self.pool(*c, split)
                    .iter()
                    .enumerate()
                    .map(move |(index, v)| TaskSpec { class: *c, variation: *v, split, index })
            })
            .collect()
    }

    /// A class drawn uniformly from the split, then a variation from its pool.
    pub fn sample_task(&self, split: Split, rng: &mut Rng) -> TaskSpec {
        let classes = self.benchmark.classes(split);
        let class = classes[rng.gen_range(0..classes.len())];
        let pool = self.pool(class, split);
        let index = rng.gen_range(0..pool.len());
        TaskSpec { class, variation: pool[index], split, index }
    }
}

/// Samples one task from the named distribution.
pub fn sample_task(distribution_id: &str, split: Split, benchmark_seed: u64, rng: &mut Rng) -> Result<TaskSpec> {
    let b = Benchmark::parse(distribution_id)?;
    Ok(TaskPools::build(b, benchmark_seed).sample_task(split, rng))
}

/// Fixed-size observation. The two goal slots are always zero.
pub type Observation = [f64; OBS_DIM];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub obj: [f64; 2],
    pub prev_pos: [f64; 2],
    pub prev_obj: [f64; 2],
    /// Steps executed in the current episode.
    pub t: usize,
    pub horizon: usize,
    pub succeeded: bool,
}

impl EnvState {
    pub fn observation(&self) -> Observation {
        let mut o = [0.0; OBS_DIM];
        o[0..2].copy_from_slice(&self.pos);
        o[2..4].copy_from_slice(&self.vel);
        o[4..6].copy_from_slice(&self.obj);
        o[6..8].copy_from_slice(&self.prev_pos);
        o[8..10].copy_from_slice(&self.prev_obj);
        o
    }

    pub fn done(&self) -> bool {
        self.t >= self.horizon
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub shaped_reward: f64,
    pub sparse_reward: f64,
    /// The target configuration is satisfied after this step.
    pub success: bool,
    /// First success of the episode happened on this step.
    pub first_success: bool,
    pub episode_done: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    math::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]))
}

/// Distance of the controlled entity from the class's target configuration.
pub fn target_distance(state: &EnvState, task: &TaskSpec) -> f64 {
    let g = task.variation.goal;
    match task.class {
        TaskClass::Reach | TaskClass::ReachMovingStart => dist(state.pos, g),
        TaskClass::Push | TaskClass::PushReverse => dist(state.obj, g),
        TaskClass::PressHold => {
            let d = dist(state.pos, g);
            let s = state.vel[0] * state.vel[0] + state.vel[1] * state.vel[1];
            math::sqrt(d * d + s)
        }
    }
}

pub fn reset(task: &TaskSpec, horizon: usize, rng: &mut Rng) -> (EnvState, Observation) {
    let base = match task.class {
        TaskClass::ReachMovingStart => task.variation.start,
        _ => [0.0, 0.0],
    };
    let pos = [
        (base[0] + uniform(rng, -RESET_NOISE, RESET_NOISE)).clamp(-1.0, 1.0),
        (base[1] + uniform(rng, -RESET_NOISE, RESET_NOISE)).clamp(-1.0, 1.0),
    ];
    let obj = task.variation.object;
    let s = EnvState { pos, vel: [0.0; 2], obj, prev_pos: pos, prev_obj: obj, t: 0, horizon, succeeded: false };
    (s, s.observation())
}

/// Sparse reward for one step: `1 - 0.7 t / T` on the first success of the
/// episode, `-0.2` on the last step of a failed episode, zero otherwise.
pub fn sparse_reward(success_now: bool, already_succeeded: bool, failed_terminal: bool, t: usize, horizon: usize) -> f64 {
    if success_now && !already_succeeded {
        1.0 - 0.7 * t as f64 / horizon as f64
    } else if failed_terminal {
        -0.2
    } else {
        0.0
    }
}

/// Potential-based shaping on the target distance plus a bonus on the first
/// success of the episode.
pub fn shaped_reward(state: &EnvState, task: &TaskSpec, next: &EnvState) -> f64 {
    let bonus = if next.succeeded && !state.succeeded { SUCCESS_BONUS } else { 0.0 };
    SHAPING_COEF * (target_distance(state, task) - target_distance(next, task)) + bonus
}

/// Advances one step. Actions are clipped to `[-1, 1]^2` first.
pub fn step(state: &mut EnvState, task: &TaskSpec, action: &[f64]) -> Result<StepOutcome> {
    if state.done() {
        return Err(Error::usage("step called on a finished episode"));
    }
    if action.len() != ACT_DIM {
        return Err(Error::config(format!("action must have {ACT_DIM} components")));
    }
    let before = *state;
    let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
    let mut next = before;
    next.prev_pos = before.pos;
    next.prev_obj = before.obj;
    for k in 0..2 {
        next.vel[k] = (before.vel[k] + DT * a[k]).clamp(-MAX_SPEED, MAX_SPEED);
        next.pos[k] = (before.pos[k] + DT * next.vel[k]).clamp(-1.0, 1.0);
    }
    if task.class.pushes_object() {
        // frictionless contact: only the displacement along the contact normal transfers
        let disp = [next.pos[0] - before.pos[0], next.pos[1] - before.pos[1]];
        let gap = dist(before.obj, before.pos).max(1e-12);
        let n = [(before.obj[0] - before.pos[0]) / gap, (before.obj[1] - before.pos[1]) / gap];
        let push = disp[0] * n[0] + disp[1] * n[1];
        if push > 0.0 && dist(next.pos, before.obj) < CONTACT_RADIUS {
            for k in 0..2 {
                next.obj[k] = (before.obj[k] + push * n[k]).clamp(-1.0, 1.0);
            }
        }
    }
    next.t = before.t + 1;
    let success_now = target_distance(&next, task) < SUCCESS_RADIUS;
    let first_success = success_now && !before.succeeded;
    next.succeeded = before.succeeded || success_now;
    let episode_done = next.t == next.horizon;
    let failed_terminal = episode_done && !next.succeeded;
    let sparse = sparse_reward(success_now, before.succeeded, failed_terminal, next.t, next.horizon);
    let shaped = shaped_reward(&before, task, &next);
    *state = next;
    Ok(StepOutcome {
        observation: next.observation(),
        shaped_reward: shaped,
        sparse_reward: sparse,
        success: success_now,
        first_success,
        episode_done,
    })
}

/// Hand-written controller that solves every class; used to show that the
/// tasks are solvable and as a reference in tests.
pub fn scripted_action(state: &EnvState, task: &TaskSpec) -> [f64; 2] {
    let pd = |target: [f64; 2], kp: f64, kd: f64| -> [f64; 2] {
        [
            (kp * (target[0] - state.pos[0]) - kd * state.vel[0]).clamp(-1.0, 1.0),
            (kp * (target[1] - state.pos[1]) - kd * state.vel[1]).clamp(-1.0, 1.0),
        ]
    };
    let g = task.variation.goal;
    match task.class {
        TaskClass::Reach | TaskClass::ReachMovingStart => pd(g, 8.0, 5.0),
        TaskClass::PressHold => pd(g, 6.0, 6.0),
        TaskClass::Push | TaskClass::PushReverse => {
            let q = state.obj;
            let dq = dist(g, q);
            if dq < 0.5 * SUCCESS_RADIUS {
                return [(-5.0 * state.vel[0]).clamp(-1.0, 1.0), (-5.0 * state.vel[1]).clamp(-1.0, 1.0)];
            }
            let dir = [(g[0] - q[0]) / dq, (g[1] - q[1]) / dq];
            let behind = [q[0] - 0.07 * dir[0], q[1] - 0.07 * dir[1]];
            let rel = [state.pos[0] - q[0], state.pos[1] - q[1]];
            let along = rel[0] * dir[0] + rel[1] * dir[1];
            let lateral = (rel[0] * dir[1] - rel[1] * dir[0]).abs();
            if along < -0.03 && lateral < 0.03 {
                // lined up behind the object: drive it through the goal
                let through = [g[0] - 0.04 * dir[0], g[1] - 0.04 * dir[1]];
                pd(through, 6.0, 4.0)
            } else {
                pd(behind, 8.0, 5.0)
            }
        }
    }
}

/// Exponential moving averages of one class's shaped reward, used to rescale
/// shaped rewards to a target mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassRewardStats {
    pub class: TaskClass,
    /// Running mean of raw shaped rewards.
    pub mean: f64,
    /// Running mean of the rewards after normalisation.
    pub normalized_mean: f64,
    pub count: u64,
    pub decay: f64,
}

pub const NORMALIZER_EPS: f64 = 1e-8;

impl ClassRewardStats {
    pub fn new(class: TaskClass) -> Self {
        ClassRewardStats { class, mean: 0.0, normalized_mean: 0.0, count: 0, decay: 0.99 }
    }

    /// EMA update; the first observation initialises the mean.
    pub fn update(&mut self, value: f64) {
        self.mean = if self.count == 0 { value } else { self.decay * self.mean + (1.0 - self.decay) * value };
        self.count += 1;
    }

    /// Multiplier that maps the running mean onto `target_mean` in magnitude.
    pub fn scale(&self, target_mean: f64) -> f64 {
        target_mean / math::fabs(self.mean).max(NORMALIZER_EPS)
    }

    /// Folds an already-normalised value into the normalised running mean.
    pub fn record_normalized(&mut self, value: f64) {
        self.normalized_mean = if self.count <= 1 {
            value
        } else {
            self.decay * self.normalized_mean + (1.0 - self.decay) * value
        };
    }
}

/// Updates the running mean with `shaped_reward`, then rescales it.
pub fn normalize_extrinsic(stats: &mut ClassRewardStats, shaped_reward: f64, target_mean: f64) -> f64 {
    stats.update(shaped_reward);
    let out = shaped_reward * stats.scale(target_mean);
    stats.record_normalized(out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn reach_task() -> TaskSpec {
        TaskPools::build(Benchmark::Ml1Reach, 3).tasks(Split::Train)[0]
    }

    fn still(task: &TaskSpec) -> EnvState {
        let (mut s, _) = reset(task, 100, &mut SeedTree::new(0).stream("r"));
        s.pos = [0.0, 0.0];
        s.prev_pos = s.pos;
        s
    }

    #[test]
    fn sparse_reward_formula() {
        assert!((sparse_reward(true, false, false, 250, 500) - 0.65).abs() < 1e-15);
        assert_eq!(sparse_reward(false, false, true, 500, 500), -0.2);
        assert_eq!(sparse_reward(true, true, false, 300, 500), 0.0);
        assert_eq!(sparse_reward(false, false, false, 10, 500), 0.0);
    }

    #[test]
    fn zero_action_from_rest_stays_put() {
        let task = reach_task();
        let mut s = still(&task);
        let o = step(&mut s, &task, &[0.0, 0.0]).unwrap();
        assert_eq!(s.pos, [0.0, 0.0]);
        assert_eq!(o.shaped_reward, 0.0);
    }

    #[test]
    fn unit_push_from_rest() {
        let task = reach_task();
        let mut s = still(&task);
        step(&mut s, &task, &[1.0, 0.0]).unwrap();
        assert!((s.vel[0] - 0.1).abs() < 1e-15 && s.vel[1] == 0.0);
        assert!((s.pos[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn actions_are_clipped() {
        let task = reach_task();
        let mut a = still(&task);
        let mut b = still(&task);
        step(&mut a, &task, &[7.0, -3.0]).unwrap();
        step(&mut b, &task, &[1.0, -1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shaped_reward_rewards_progress() {
        let task = reach_task();
        let s = still(&task);
        let mut closer = s;
        let d0 = target_distance(&s, &task);
        let g = task.variation.goal;
        // move 0.1 along the line towards the goal
        closer.pos = [g[0] * 0.1 / d0, g[1] * 0.1 / d0];
        assert!((shaped_reward(&s, &task, &closer) - 1.0).abs() < 1e-12);
        assert_eq!(shaped_reward(&s, &task, &s), 0.0);
    }

    #[test]
    fn shaped_return_telescopes_over_scripted_episode() {
        let task = reach_task();
        let (mut s, _) = reset(&task, 100, &mut SeedTree::new(1).stream("e"));
        let d0 = target_distance(&s, &task);
        let mut total = 0.0;
        let mut first = None;
        while !s.done() {
            let a = scripted_action(&s, &task);
            let o = step(&mut s, &task, &a).unwrap();
            total += o.shaped_reward;
            if o.first_success && first.is_none() {
                first = Some(total);
            }
        }
        let at_success = first.expect("scripted reach succeeds");
        // up to the success step: c * (d0 - d_success) + bonus with d_success < radius
        assert!((at_success - (SHAPING_COEF * d0 + 1.0)).abs() <= SHAPING_COEF * SUCCESS_RADIUS);
        assert!((total - (SHAPING_COEF * (d0 - target_distance(&s, &task)) + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn episodes_last_exactly_horizon_and_goal_slots_stay_zero() {
        let pools = TaskPools::build(Benchmark::Ml5, 9);
        let mut rng = SeedTree::new(2).stream("ep");
        for task in pools.tasks(Split::Train).iter().chain(&pools.tasks(Split::Test)).step_by(7) {
            let (mut s, o) = reset(task, 100, &mut rng);
            assert_eq!(&o[10..12], &[0.0, 0.0]);
            let mut steps = 0;
            let mut positives = 0;
            loop {
                let a = [uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0)];
                let out = step(&mut s, task, &a).unwrap();
                steps += 1;
                assert_eq!(&out.observation[10..12], &[0.0, 0.0]);
                assert!(s.pos.iter().chain(&s.obj).all(|v| (-1.0..=1.0).contains(v)));
                if out.sparse_reward > 0.0 {
                    positives += 1;
                    assert!((0.3..=1.0).contains(&out.sparse_reward));
                }
                if out.sparse_reward != 0.0 {
                    assert!(out.first_success || out.episode_done);
                }
                assert_eq!(out.episode_done, steps == 100);
                if out.episode_done {
                    break;
                }
            }
            assert!(positives <= 1);
            assert!(matches!(step(&mut s, task, &[0.0, 0.0]), Err(Error::Usage(_))));
        }
    }

    #[test]
    fn reset_places_reach_agent_near_origin() {
        let task = reach_task();
        let mut rng = SeedTree::new(3).stream("reset");
        for _ in 0..100 {
            let (s, o) = reset(&task, 100, &mut rng);
            assert!(s.pos.iter().all(|v| v.abs() <= RESET_NOISE));
            assert_eq!(s.t, 0);
            assert!(!s.succeeded);
            assert_eq!(&o[4..6], &[0.0, 0.0]);
            assert_eq!(&o[10..12], &[0.0, 0.0]);
        }
    }

    #[test]
    fn dynamics_are_deterministic() {
        let task = TaskPools::build(Benchmark::Ml1Push, 1).tasks(Split::Train)[4];
        let (s0, _) = reset(&task, 100, &mut SeedTree::new(4).stream("x"));
        let (mut a, mut b) = (s0, s0);
        for k in 0..60 {
            let act = [libm::sin(k as f64), libm::cos(0.3 * k as f64)];
            assert_eq!(step(&mut a, &task, &act).unwrap(), step(&mut b, &task, &act).unwrap());
        }
    }

    #[test]
    fn pools_are_disjoint_and_deterministic() {
        for b in Benchmark::ALL {
            for seed in 0..5 {
                let p = TaskPools::build(b, seed);
                assert_eq!(p, TaskPools::build(b, seed));
                for c in b.all_classes() {
                    let (tr, te) = (p.pool(c, Split::Train), p.pool(c, Split::Test));
                    assert_eq!((tr.len(), te.len()), (POOL_SIZE, POOL_SIZE));
                    assert!(tr.iter().all(|v| !te.contains(v)));
                }
            }
        }
        let a = TaskPools::build(Benchmark::Ml1Reach, 1);
        let b = TaskPools::build(Benchmark::Ml1Reach, 2);
        assert_ne!(a.pool(TaskClass::Reach, Split::Train), b.pool(TaskClass::Reach, Split::Train));
    }

    #[test]
    fn sample_task_is_deterministic_and_respects_split() {
        let t1 = sample_task("toy-ml1-reach", Split::Train, 5, &mut SeedTree::new(1).stream("s")).unwrap();
        let t2 = sample_task("toy-ml1-reach", Split::Train, 5, &mut SeedTree::new(1).stream("s")).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.class, TaskClass::Reach);
        let pools = TaskPools::build(Benchmark::Ml1Reach, 5);
        assert!(pools.pool(TaskClass::Reach, Split::Train).contains(&t1.variation));
        assert!(matches!(
            sample_task("toy-ml3", Split::Train, 5, &mut SeedTree::new(1).stream("s")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ml5_test_sampling_only_yields_test_classes() {
        let pools = TaskPools::build(Benchmark::Ml5, 0);
        let mut rng = SeedTree::new(0).stream("ml5");
        let mut counts: BTreeMap<TaskClass, usize> = BTreeMap::new();
        for _ in 0..1000 {
            *counts.entry(pools.sample_task(Split::Test, &mut rng).class).or_default() += 1;
        }
        let keys: Vec<_> = counts.keys().copied().collect();
        assert_eq!(keys, vec![TaskClass::ReachMovingStart, TaskClass::PushReverse]);
    }

    #[test]
    fn scripted_controllers_solve_every_class() {
        for b in Benchmark::ALL {
            let pools = TaskPools::build(b, 11);
            let mut rng = SeedTree::new(5).stream("scripted");
            for split in [Split::Train, Split::Test] {
                for class in b.classes(split) {
                    let pool = pools.pool(*class, split);
                    let mut wins = 0;
                    for (index, v) in pool.iter().enumerate() {
                        let task = TaskSpec { class: *class, variation: *v, split, index };
                        let (mut s, _) = reset(&task, 100, &mut rng);
                        while !s.done() {
                            let a = scripted_action(&s, &task);
                            step(&mut s, &task, &a).unwrap();
                        }
                        wins += s.succeeded as usize;
                    }
                    assert!(wins as f64 >= 0.95 * pool.len() as f64, "{:?} {wins}/{}", class, pool.len());
                }
            }
        }
    }

    #[test]
    fn normalizer_scales_to_target() {
        let mut s = ClassRewardStats::new(TaskClass::Reach);
        s.update(1e-4);
        assert!((s.scale(1e-4) - 1.0).abs() < 1e-12);
        let mut s = ClassRewardStats::new(TaskClass::Reach);
        s.update(1.0);
        assert!((s.scale(1e-4) - 1e-4).abs() < 1e-18);
        let mut s = ClassRewardStats::new(TaskClass::Reach);
        s.update(0.0);
        assert_eq!(s.scale(1e-4), 1e-4 / NORMALIZER_EPS);
    }

    #[test]
    fn normalized_constant_stream_converges_to_target() {
        let mut s = ClassRewardStats::new(TaskClass::Push);
        s.update(20.0); // warm-up far from the stream value
        let mut out = vec![];
        for _ in 0..1000 {
            out.push(normalize_extrinsic(&mut s, 0.37, 1e-4));
        }
        // EMA simulated independently: m_k = 0.37 + (20 - 0.37) 0.99^k
        let m_last = 0.37 + (20.0 - 0.37) * libm::pow(0.99, 1000.0);
        assert!((out[999] - 0.37 * 1e-4 / m_last).abs() < 1e-15);
        assert!((out[999] - 1e-4).abs() < 1e-5);
    }
}
