//! Binary checkpoint container.
//!
//! Layout (little-endian): 8-byte magic, `u32` format version, `u32` length
//! of a UTF-8 `key=value` descriptor block, the block, `u64` value count,
//! that many `f64` values (trainable parameters then batch-norm buffers),
//! and a trailing CRC32 of every preceding byte.

use super::{CopulaNet, MarginalNet, Network};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NIFMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub descriptor: BTreeMap<String, String>,
    pub payload: Vec<f64>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub(crate) fn get<T: FromStr>(d: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = d.get(key).ok_or_else(|| corrupt(format!("descriptor lacks `{key}`")))?;
    v.parse().map_err(|_| corrupt(format!("descriptor `{key}` = `{v}` does not parse")))
}

pub(crate) fn get_list(d: &BTreeMap<String, String>, key: &str) -> Result<Vec<usize>> {
    let v: String = get(d, key)?;
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| corrupt(format!("descriptor `{key}` = `{v}` does not parse"))))
        .collect()
}

impl Checkpoint {
    /// Captures `net` plus free-form metadata (epochs, losses, seed).
    pub fn from_network<N: Network>(net: &N, metadata: &[(String, String)]) -> Self {
        let mut descriptor: BTreeMap<String, String> = net.descriptor().into_iter().collect();
        for (k, v) in metadata {
            descriptor.insert(format!("meta.{k}"), v.clone());
        }
        Self {
            version: CHECKPOINT_VERSION,
            descriptor,
            payload: net.store().flat(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut desc = String::new();
        for (k, v) in &self.descriptor {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(corrupt(format!("descriptor entry `{k}` cannot be encoded")));
            }
            desc.push_str(k);
            desc.push('=');
            desc.push_str(v);
            desc.push('\n');
        }
        let mut out = Vec::with_capacity(28 + desc.len() + 8 * self.payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 28 {
            return Err(corrupt("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch (corrupt file)"));
        }
        if &body[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let dlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        let rest = &body[16..];
        if rest.len() < dlen + 8 {
            return Err(corrupt("truncated descriptor"));
        }
        let desc = std::str::from_utf8(&rest[..dlen]).map_err(|_| corrupt("descriptor is not UTF-8"))?;
        let mut descriptor = BTreeMap::new();
        for line in desc.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("bad descriptor line `{line}`")))?;
            descriptor.insert(k.to_string(), v.to_string());
        }
        let rest = &rest[dlen..];
        let n = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let data = &rest[8..];
        if data.len() != n * 8 {
            return Err(corrupt(format!("payload holds {} bytes, expected {}", data.len(), n * 8)));
        }
        let payload = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self {
            version,
            descriptor,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// `"marginal"` or `"copula"`.
    pub fn net_kind(&self) -> Result<String> {
        get(&self.descriptor, "net")
    }

    pub fn metadata(&self, key: &str) -> Option<&str> {
        self.descriptor.get(&format!("meta.{key}")).map(String::as_str)
    }

    /// Errors unless descriptor `key` equals `want`.
    pub fn expect(&self, key: &str, want: &str) -> Result<()> {
        match self.descriptor.get(key) {
            Some(v) if v == want => Ok(()),
            Some(v) => Err(Error::Shape(format!("checkpoint has {key} = {v}, expected {want}"))),
            None => Err(corrupt(format!("descriptor lacks `{key}`"))),
        }
    }

    fn restore<N: Network>(&self, mut net: N) -> Result<N> {
        net.store_mut().set_flat(&self.payload).map_err(|e| corrupt(e.to_string()))?;
        Ok(net)
    }

    pub fn to_marginal(&self) -> Result<MarginalNet> {
        self.expect("net", "marginal")?;
        self.restore(MarginalNet::from_descriptor(&self.descriptor)?)
    }

    pub fn to_copula(&self) -> Result<CopulaNet> {
        self.expect("net", "copula")?;
        self.restore(CopulaNet::from_descriptor(&self.descriptor)?)
    }
}
