//! Binary container for ReLU regression datasets.
//!
//! Layout, all little-endian: the 8-byte magic, a `u32` version, `d: u32`,
//! `n: u64`, `seed: u64`, then `w*` (`d` doubles), `x` (`n d` doubles,
//! row-major) and `y` (`n` doubles).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sosp_core::relu::ReluInstance;

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"SOSPRELU";
pub const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format: String,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub bytes: usize,
    pub sha256: String,
}

pub fn encode(inst: &ReluInstance) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * (inst.d + inst.x.len() + inst.y.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(inst.d as u32).to_le_bytes());
    out.extend_from_slice(&(inst.n as u64).to_le_bytes());
    out.extend_from_slice(&inst.seed.to_le_bytes());
    for v in inst.w_star.iter().chain(&inst.x).chain(&inst.y) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn meta(inst: &ReluInstance, bytes: &[u8]) -> DatasetMeta {
    DatasetMeta {
        format: format!("sosp-relu-dataset/{VERSION}"),
        d: inst.d,
        n: inst.n,
        seed: inst.seed,
        bytes: bytes.len(),
        sha256: hex::encode(Sha256::digest(bytes)),
    }
}

fn take<const N: usize>(b: &[u8], at: usize) -> [u8; N] {
    b[at..at + N].try_into().expect("length checked by caller")
}

pub fn decode(bytes: &[u8]) -> Result<ReluInstance> {
    let bad = |m: &str| HarnessError::Decode(m.to_string());
    if bytes.len() < HEADER {
        return Err(bad("truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(bytes, 8));
    if version != VERSION {
        return Err(HarnessError::Decode(format!("unsupported version {version}")));
    }
    let d = u32::from_le_bytes(take(bytes, 12)) as u64;
    let n = u64::from_le_bytes(take(bytes, 16));
    let seed = u64::from_le_bytes(take(bytes, 24));
    if d == 0 || n == 0 {
        return Err(bad("d and n must be positive"));
    }
    let count = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n))
        .and_then(|c| c.checked_add(d))
        .ok_or_else(|| bad("sizes overflow"))?;
    let body = (bytes.len() - HEADER) as u64;
    if count.checked_mul(8) != Some(body) {
        return Err(HarnessError::Decode(format!("body is {body} bytes, header implies {count} doubles")));
    }
    let (d, n) = (d as usize, n as usize);
    let mut vals = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")));
    let w_star: Vec<f64> = vals.by_ref().take(d).collect();
    let x: Vec<f64> = vals.by_ref().take(n * d).collect();
    let y: Vec<f64> = vals.collect();
    Ok(ReluInstance::from_parts(w_star, x, y, seed)?)
}
