//! Checkpoint files.
//!
//! Layout: one UTF-8 JSON header line terminated by `\n`, followed by every
//! parameter as a little-endian `f32`, block by block in the order listed in
//! the header's `blocks` field (see [`Blocks`](super::Blocks)). Matrices are
//! row-major `out x in`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, NetParams};
use crate::env::TaskKind;
use crate::{Error, Result};

pub const FORMAT: &str = "ovenlab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub arch: Arch,
    pub task: TaskKind,
    pub target: u32,
    pub seed: u64,
    pub train_step: u64,
    pub param_count: usize,
    pub blocks: Vec<String>,
}

impl CheckpointHeader {
    pub fn new(arch: Arch, task: TaskKind, target: u32, seed: u64, train_step: u64) -> Self {
        CheckpointHeader {
            format: FORMAT.to_string(),
            version: VERSION,
            arch,
            task,
            target,
            seed,
            train_step,
            param_count: arch.param_count(),
            blocks: arch.blocks().named().iter().map(|(n, _)| n.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: NetParams<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        out.reserve(self.params.values().len() * 4);
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint { path: origin.to_path_buf(), reason };
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
        }
        if header.param_count != header.arch.param_count() {
            return Err(Error::ArchMismatch(format!(
                "header declares {} parameters but its architecture has {}",
                header.param_count,
                header.arch.param_count()
            )));
        }
        let body = &bytes[nl + 1..];
        if body.len() != header.param_count * 4 {
            return Err(bad(format!("body has {} bytes, expected {}", body.len(), header.param_count * 4)));
        }
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let params = NetParams::from_values(header.arch, values)?;
        if !params.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }

    /// Loads and checks the stored architecture against `arch`.
    pub fn load_expecting(path: &Path, arch: &Arch) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.header.arch != *arch {
            return Err(Error::ArchMismatch(format!("checkpoint has {:?}, expected {:?}", ck.header.arch, arch)));
        }
        Ok(ck)
    }
}
