//! Sectioned binary checkpoints.
//!
//! Layout, all integers unsigned 64-bit little-endian:
//! `b"SSLNET1\0"`, metadata length, metadata JSON, then one block per tensor:
//! name length, UTF-8 name, rank, each dimension, and the raw little-endian `f32` data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sparse_shift::arch::ArchSpec;
use sparse_shift::graph::{Graph, StateEntry};
use sparse_shift::train::MetricsRow;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"SSLNET1\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub arch: ArchSpec,
    pub iter: usize,
    pub seed: u64,
    #[serde(default)]
    pub metrics_tail: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Metadata,
    pub entries: Vec<StateEntry>,
}

impl Checkpoint {
    pub fn from_graph(graph: &Graph, meta: Metadata) -> Self {
        Checkpoint { meta, entries: graph.state_dict() }
    }

    /// Rebuilds the architecture and loads every stored tensor into it.
    pub fn to_graph(&self) -> CliResult<Graph> {
        let mut graph = self.meta.arch.build(self.meta.seed)?;
        graph.load_state_dict(&self.entries)?;
        Ok(graph)
    }

    pub fn encode(&self) -> CliResult<Vec<u8>> {
        let meta =
            serde_json::to_vec(&self.meta).map_err(|e| CliError::Validation(format!("checkpoint metadata: {e}")))?;
        let data_len: usize =
            self.entries.iter().map(|e| 24 + e.name.len() + 8 * e.dims.len() + 4 * e.data.len()).sum();
        let mut out = Vec::with_capacity(16 + meta.len() + data_len);
        out.extend_from_slice(MAGIC);
        put_u64(&mut out, meta.len());
        out.extend_from_slice(&meta);
        for e in &self.entries {
            put_u64(&mut out, e.name.len());
            out.extend_from_slice(e.name.as_bytes());
            put_u64(&mut out, e.dims.len());
            for &d in &e.dims {
                put_u64(&mut out, d);
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("bad magic".into());
        }
        let meta_len = r.len("metadata length")?;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len)?).map_err(|e| format!("metadata: {e}"))?;
        let mut entries = Vec::new();
        while r.pos < bytes.len() {
            let name_len = r.len("name length")?;
            let name =
                std::str::from_utf8(r.take(name_len)?).map_err(|_| "tensor name is not UTF-8".to_string())?.to_string();
            let rank = r.len("rank")?;
            if rank > 8 {
                return Err(format!("{name}: rank {rank} exceeds 8"));
            }
            let dims = (0..rank).map(|_| r.len("dimension")).collect::<Result<Vec<_>, _>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| format!("{name}: element count overflows"))?;
            let raw = r.take(count).map_err(|e| format!("{name}: {e}"))?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            entries.push(StateEntry { name, dims, data });
        }
        Ok(Checkpoint { meta, entries })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let bytes = self.encode()?;
        std::fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Checkpoint { path: path.to_path_buf(), msg: e.to_string() })?;
        Self::decode(&bytes).map_err(|msg| CliError::Checkpoint { path: path.to_path_buf(), msg })
    }
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!("truncated: need {n} bytes at offset {}, {} remain", self.pos, self.bytes.len() - self.pos)
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len(&mut self, what: &str) -> Result<usize, String> {
        let b = self.take(8).map_err(|e| format!("{what}: {e}"))?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| format!("{what} {v} does not fit in memory"))
    }
}
