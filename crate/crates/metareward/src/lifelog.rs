//! Versioned binary log of one lifetime and its per-episode CSV summary.
//!
//! Layout, little-endian: magic `b"MRWDLIFE"`, `u32` version, config hash
//! string, task (class id string, split id string, `u64` index, six `f64`
//! variation components), `u64` horizon, `u64` learning steps, transitions,
//! update boundaries, episodes, then an optional meta trace. Strings are a
//! `u32` length followed by UTF-8 bytes; sequences a `u64` count followed by
//! their items.

use crate::container::Cursor;
use crate::error::{Error, Result};
use metareward_core::env::{Split, TaskClass, TaskSpec, Variation, ACT_DIM, OBS_DIM};
use metareward_core::inner::{EpisodeSummary, LifetimeRecord, MetaTrace, Transition};
use std::io::Write;
use std::path::Path;

pub const LIFE_MAGIC: &[u8; 8] = b"MRWDLIFE";
pub const LIFE_VERSION: u32 = 1;

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
}

pub fn encode_lifetime(rec: &LifetimeRecord, config_hash: &str) -> Vec<u8> {
    let mut o = Out(Vec::new());
    o.0.extend_from_slice(LIFE_MAGIC);
    o.u32(LIFE_VERSION);
    o.str(config_hash);
    o.str(rec.task.class.id());
    o.str(rec.task.split.id());
    o.u64(rec.task.index as u64);
    let v = &rec.task.variation;
    for x in v.goal.iter().chain(&v.object).chain(&v.start) {
        o.f64(*x);
    }
    o.u64(rec.horizon as u64);
    o.u64(rec.learning_steps as u64);
    o.u64(rec.transitions.len() as u64);
    for t in &rec.transitions {
        t.obs.iter().for_each(|x| o.f64(*x));
        t.action.iter().for_each(|x| o.f64(*x));
        o.f64(t.log_prob);
        o.f64(t.shaped_reward);
        o.f64(t.sparse_reward);
        o.u64(t.episode as u64);
        o.u8(t.success as u8 | (t.episode_start as u8) << 1 | (t.episode_done as u8) << 2);
    }
    o.u64(rec.update_boundaries.len() as u64);
    rec.update_boundaries.iter().for_each(|b| o.u64(*b as u64));
    o.u64(rec.episodes.len() as u64);
    for e in &rec.episodes {
        o.u64(e.index as u64);
        o.f64(e.sparse_return);
        o.f64(e.shaped_return);
        o.u8(e.success as u8 | (e.validation as u8) << 1 | (e.deterministic as u8) << 2);
    }
    match &rec.meta {
        None => o.u8(0),
        Some(m) => {
            o.u8(1);
            o.f64s(&m.signals);
            o.f64s(&m.log_probs);
            o.f64s(&m.outer_values);
            o.u64(m.checkpoint_every as u64);
            o.u64(m.checkpoints.len() as u64);
            m.checkpoints.iter().for_each(|c| o.f64s(c));
            o.u64(m.std_clamps);
        }
    }
    o.0
}

/// Decodes a log into the record and the configuration hash it carries.
pub fn decode_lifetime(bytes: &[u8]) -> std::result::Result<(LifetimeRecord, String), String> {
    let mut c = Cursor::new(bytes);
    if c.take(8)? != LIFE_MAGIC {
        return Err("not a lifetime log".into());
    }
    let version = c.u32()?;
    if version != LIFE_VERSION {
        return Err(format!("unsupported lifetime log version {version}"));
    }
    let hash = c.string()?;
    let class = TaskClass::parse(&c.string()?).map_err(|e| e.to_string())?;
    let split = Split::parse(&c.string()?).map_err(|e| e.to_string())?;
    let index = c.u64()? as usize;
    let mut comps = [0.0; 6];
    for x in comps.iter_mut() {
        *x = c.f64()?;
    }
    let variation = Variation { goal: [comps[0], comps[1]], object: [comps[2], comps[3]], start: [comps[4], comps[5]] };
    let horizon = c.u64()? as usize;
    let learning_steps = c.u64()? as usize;
    let count = |c: &mut Cursor, item: usize| -> std::result::Result<usize, String> {
        let n = c.u64()? as usize;
        if n.saturating_mul(item) > c.buf.len() - c.pos {
            return Err("truncated data".into());
        }
        Ok(n)
    };
    let n = count(&mut c, 8 * (OBS_DIM + ACT_DIM + 4) + 1)?;
    let mut transitions = Vec::with_capacity(n);
    for _ in 0..n {
        let mut obs = [0.0; OBS_DIM];
        for x in obs.iter_mut() {
            *x = c.f64()?;
        }
        let mut action = [0.0; ACT_DIM];
        for x in action.iter_mut() {
            *x = c.f64()?;
        }
        let (log_prob, shaped_reward, sparse_reward) = (c.f64()?, c.f64()?, c.f64()?);
        let episode = c.u64()? as usize;
        let f = c.u8()?;
        transitions.push(Transition {
            obs,
            action,
            log_prob,
            shaped_reward,
            sparse_reward,
            success: f & 1 != 0,
            episode,
            episode_start: f & 2 != 0,
            episode_done: f & 4 != 0,
        });
    }
    let nb = count(&mut c, 8)?;
    let update_boundaries = (0..nb).map(|_| c.u64().map(|b| b as usize)).collect::<std::result::Result<_, _>>()?;
    let ne = count(&mut c, 25)?;
    let mut episodes = Vec::with_capacity(ne);
    for _ in 0..ne {
        let index = c.u64()? as usize;
        let (sparse_return, shaped_return) = (c.f64()?, c.f64()?);
        let f = c.u8()?;
        episodes.push(EpisodeSummary { index, sparse_return, shaped_return, success: f & 1 != 0, validation: f & 2 != 0, deterministic: f & 4 != 0 });
    }
    let f64s = |c: &mut Cursor| -> std::result::Result<Vec<f64>, String> {
        let n = count(c, 8)?;
        (0..n).map(|_| c.f64()).collect()
    };
    let meta = match c.u8()? {
        0 => None,
        1 => {
            let signals = f64s(&mut c)?;
            let log_probs = f64s(&mut c)?;
            let outer_values = f64s(&mut c)?;
            let checkpoint_every = c.u64()? as usize;
            let nc = count(&mut c, 8)?;
            let checkpoints = (0..nc).map(|_| f64s(&mut c)).collect::<std::result::Result<_, _>>()?;
            Some(MetaTrace { signals, log_probs, outer_values, checkpoints, checkpoint_every, std_clamps: c.u64()? })
        }
        t => return Err(format!("invalid meta trace tag {t}")),
    };
    if !c.finished() {
        return Err("trailing bytes after the lifetime".into());
    }
    let task = TaskSpec { class, variation, split, index };
    Ok((LifetimeRecord { task, horizon, learning_steps, transitions, update_boundaries, episodes, meta, update_stats: Vec::new() }, hash))
}

/// Writes `{stem}.bin` and `{stem}.csv` (episode, return, success).
pub fn dump_lifetime(dir: &Path, stem: &str, rec: &LifetimeRecord, config_hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin = dir.join(format!("{stem}.bin"));
    std::fs::write(&bin, encode_lifetime(rec, config_hash)).map_err(|e| Error::io(&bin, e))?;
    let path = dir.join(format!("{stem}.csv"));
    let mut text = Vec::new();
    writeln!(text, "# config_hash={config_hash}").unwrap();
    let mut w = csv::Writer::from_writer(text);
    w.write_record(["episode", "return", "success"])?;
    for e in &rec.episodes {
        w.write_record([e.index.to_string(), format!("{}", e.sparse_return), (e.success as u8).to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}
