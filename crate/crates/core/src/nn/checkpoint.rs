//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"DTNE1"                       5 bytes
//! version u16                            currently 1
//! meta    u32 length + JSON bytes        stage tag, config hash, ...
//! count   u32                            number of named arrays
//! array   u16 name length + name bytes
//!         u8 ndim + u32 per dim
//!         f32 data (product of dims)
//! ```
//!
//! Save → load → save is byte-identical: array order is sorted by name and
//! the JSON meta uses sorted keys.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::Error;
use crate::nn::adam::{AdamConfig, AdamState};
use crate::nn::params::{ParamStore, Tensor};
use crate::Result;

const MAGIC: &[u8; 5] = b"DTNE1";
const VERSION: u16 = 1;

/// In-memory form of a checkpoint file: a JSON meta object plus named
/// arrays.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub arrays: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(|v| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.meta.insert(key.to_string(), value.into());
    }

    pub fn insert_params(&mut self, prefix: &str, params: &ParamStore) {
        for (name, t) in params.iter() {
            self.arrays.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Extract every array under `prefix` into a `ParamStore`, stripping the
    /// prefix.
    pub fn extract_params(&self, prefix: &str) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, t) in &self.arrays {
            if let Some(stripped) = name.strip_prefix(prefix) {
                store.insert(stripped, t.clone());
            }
        }
        store
    }

    pub fn insert_adam(&mut self, prefix: &str, params: &ParamStore, state: &AdamState) {
        self.set_meta(&format!("{prefix}step"), state.step);
        self.set_meta(&format!("{prefix}lr"), state.config.lr as f64);
        for (name, _) in params.iter() {
            if let Some((m, v)) = state.moments(name) {
                self.arrays.insert(
                    format!("{prefix}m.{name}"),
                    Tensor { shape: vec![m.len()], data: m.to_vec() },
                );
                self.arrays.insert(
                    format!("{prefix}v.{name}"),
                    Tensor { shape: vec![v.len()], data: v.to_vec() },
                );
            }
        }
    }
}

pub fn save_checkpoint(path: &Path, container: &Container) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    // serde_json::Map is a BTreeMap: keys serialize sorted.
    let meta = serde_json::to_vec(&container.meta)?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(container.arrays.len() as u32).to_le_bytes());
    for (name, t) in &container.arrays {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Container> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    let magic = cur.take(5)?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let meta_len = cur.u32()? as usize;
    let meta_bytes = cur.take(meta_len)?;
    let meta: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(meta_bytes)?;
    let count = cur.u32()? as usize;
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::InvalidInput("non-utf8 array name in checkpoint".into()))?;
        let ndim = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4)?;
        let data: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.insert(name, Tensor { shape, data });
    }
    Ok(Container { meta, arrays })
}

/// Rebuild an `AdamState` saved by `Container::insert_adam`.
pub fn extract_adam(container: &Container, prefix: &str, lr: f32) -> AdamState {
    let mut state = AdamState::new(AdamConfig::with_lr(lr));
    if let Some(step) = container.meta.get(&format!("{prefix}step")).and_then(|v| v.as_u64()) {
        state.step = step;
    }
    state
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
