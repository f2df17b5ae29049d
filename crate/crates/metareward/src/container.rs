//! Parameter checkpoints: a flat binary container plus a JSON sidecar.
//!
//! Container layout, little-endian throughout:
//!
//! ```text
//! magic  b"MRWDPARM"
//! u32    version
//! u32    tensor count
//! per tensor:
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, u64 per dimension
//!   f64 values, row-major
//! ```

use crate::error::{Error, Result};
use metareward_core::baselines::Rl2Policy;
use metareward_core::meta_agent::{MetaAgent, MetaMode, RecurrentArch};
use metareward_core::rng::SeedTree;
use metareward_core::{ParamSet, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PARAM_MAGIC: &[u8; 8] = b"MRWDPARM";
pub const PARAM_VERSION: u32 = 1;

pub fn encode_params(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, p) in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Sequential reader over a byte slice.
pub(crate) struct Cursor<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or("truncated data")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8".to_string())
    }

    pub fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Decodes a container into `(name, tensor)` pairs in stored order.
pub fn decode_params(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut c = Cursor::new(bytes);
    if c.take(8)? != PARAM_MAGIC {
        return Err("not a parameter container".into());
    }
    let version = c.u32()?;
    if version != PARAM_VERSION {
        return Err(format!("unsupported container version {version}"));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        if rank == 0 || rank > 2 {
            return Err(format!("tensor `{name}` has unsupported rank {rank}"));
        }
        let dims: Vec<usize> = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
        let (rows, cols) = if rank == 1 { (1, dims[0]) } else { (dims[0], dims[1]) };
        let n = rows.checked_mul(cols).ok_or("tensor too large")?;
        if n.checked_mul(8).is_none_or(|b| b > c.buf.len() - c.pos) {
            return Err("truncated data".into());
        }
        let data = (0..n).map(|_| c.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
        out.push((name, Tensor::from_vec(rows, cols, data).map_err(|e| e.to_string())?));
    }
    if !c.finished() {
        return Err("trailing bytes after the last tensor".into());
    }
    Ok(out)
}

/// Copies decoded tensors into `params`, which must have exactly the same
/// names and shapes.
pub fn load_into(params: &mut ParamSet, tensors: Vec<(String, Tensor)>) -> std::result::Result<(), String> {
    if tensors.len() != params.len() {
        return Err(format!("checkpoint has {} tensors, the network has {}", tensors.len(), params.len()));
    }
    for (name, t) in tensors {
        let id = params.find(&name).ok_or_else(|| format!("unexpected tensor `{name}`"))?;
        let p = params.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape(), p.value.shape()));
        }
        p.value = t;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchJson {
    pub encoder: [usize; 2],
    pub hidden: usize,
    pub critic_width: usize,
    pub std_width: usize,
    pub mean_widths: Vec<usize>,
}

impl From<&RecurrentArch> for ArchJson {
    fn from(a: &RecurrentArch) -> Self {
        ArchJson { encoder: a.encoder, hidden: a.hidden, critic_width: a.critic_width, std_width: a.std_width, mean_widths: a.mean_widths.clone() }
    }
}

impl From<&ArchJson> for RecurrentArch {
    fn from(a: &ArchJson) -> Self {
        RecurrentArch { encoder: a.encoder, hidden: a.hidden, critic_width: a.critic_width, std_width: a.std_width, mean_widths: a.mean_widths.clone() }
    }
}

/// Description stored next to a container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    /// `intrinsic`, `advantage` or `rl2`.
    pub method: String,
    pub benchmark: String,
    pub seed: u64,
    pub out_range: f64,
    pub initial_std: f64,
    pub arch: ArchJson,
    pub config_hash: String,
    pub outer_updates: usize,
}

fn sidecar_path(bin: &Path) -> std::path::PathBuf {
    bin.with_extension("json")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `params` to `path` and the sidecar next to it (`.json`).
pub fn save_checkpoint(path: &Path, params: &ParamSet, sidecar: &Sidecar) -> Result<()> {
    write_file(path, &encode_params(params))?;
    write_file(&sidecar_path(path), serde_json::to_string_pretty(sidecar)?.as_bytes())
}

/// Reads a container and its sidecar. A missing file is a usage error.
pub fn read_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, Sidecar)> {
    let missing = |p: &Path| Error::Core(metareward_core::Error::usage(format!("missing checkpoint {}", p.display())));
    let bytes = std::fs::read(path).map_err(|e| if e.kind() == std::io::ErrorKind::NotFound { missing(path) } else { Error::io(path, e) })?;
    let side = sidecar_path(path);
    let text =
        std::fs::read_to_string(&side).map_err(|e| if e.kind() == std::io::ErrorKind::NotFound { missing(&side) } else { Error::io(&side, e) })?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let tensors = decode_params(&bytes).map_err(|m| Error::format(path, m))?;
    Ok((tensors, sidecar))
}

pub fn load_meta_agent(path: &Path) -> Result<(MetaAgent, Sidecar)> {
    let (tensors, side) = read_checkpoint(path)?;
    let mode = MetaMode::parse(&side.method)?;
    let mut agent = MetaAgent::new(mode, &RecurrentArch::from(&side.arch), side.initial_std, &mut SeedTree::new(0).stream("load"))?;
    load_into(&mut agent.params, tensors).map_err(|m| Error::format(path, m))?;
    Ok((agent, side))
}

pub fn load_rl2(path: &Path) -> Result<(Rl2Policy, Sidecar)> {
    let (tensors, side) = read_checkpoint(path)?;
    if side.method != "rl2" {
        return Err(Error::format(path, format!("expected an rl2 checkpoint, found `{}`", side.method)));
    }
    let mut policy = Rl2Policy::new(&RecurrentArch::from(&side.arch), side.initial_std, &mut SeedTree::new(0).stream("load"))?;
    load_into(&mut policy.params, tensors).map_err(|m| Error::format(path, m))?;
    Ok((policy, side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use metareward_core::rng::normal;

    fn agent() -> MetaAgent {
        let arch = RecurrentArch { encoder: [6, 4], hidden: 5, critic_width: 7, std_width: 3, mean_widths: vec![4, 4] };
        let mut a = MetaAgent::new(MetaMode::Advantage, &arch, 1.0, &mut SeedTree::new(9).stream("i")).unwrap();
        let mut rng = SeedTree::new(1).stream("w");
        for p in a.params.iter_mut() {
            // include values whose bit patterns a text format would lose
            p.value.data_mut().iter_mut().for_each(|w| *w += normal(&mut rng) * 1e-300);
        }
        a
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let a = agent();
        let bytes = encode_params(&a.params);
        let back = decode_params(&bytes).unwrap();
        for ((name, t), (_, p)) in back.iter().zip(a.params.iter()) {
            assert_eq!(name, &p.name);
            let x: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let y: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(x, y);
        }
        assert_eq!(encode_params(&{
            let mut b = agent();
            load_into(&mut b.params, back).unwrap();
            b.params
        }), bytes);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let bytes = encode_params(&agent().params);
        assert!(decode_params(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_params(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_params(&extra).is_err());
    }

    #[test]
    fn checkpoint_files_round_trip_and_missing_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = agent();
        let side = Sidecar {
            method: "advantage".into(),
            benchmark: "toy-ml1-reach".into(),
            seed: 3,
            out_range: 3.0,
            initial_std: 1.0,
            arch: ArchJson::from(&RecurrentArch { encoder: [6, 4], hidden: 5, critic_width: 7, std_width: 3, mean_widths: vec![4, 4] }),
            config_hash: "abc".into(),
            outer_updates: 2,
        };
        let path = dir.path().join("ck/checkpoint.bin");
        save_checkpoint(&path, &a.params, &side).unwrap();
        let (b, s) = load_meta_agent(&path).unwrap();
        assert_eq!(s, side);
        assert_eq!(b.params, a.params);
        let err = load_meta_agent(&dir.path().join("nope.bin")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(matches!(err, Error::Core(metareward_core::Error::Usage(_))));
    }
}
