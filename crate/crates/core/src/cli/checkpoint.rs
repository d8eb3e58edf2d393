//! Checkpoint format, all integers little-endian:
//!
//! ```text
//! "LINV" | version u32 | count u32
//! count x ( name_len u32 | name | rank u32 | dims u32... | values f64... )
//! config_len u32 | config (UTF-8 key=value lines)
//! ```

use std::path::Path;

use super::CliError;
use crate::models::ParameterStore;
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"LINV";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: ParameterStore,
    /// Echo of the resolved config that produced the tensors.
    pub config: String,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, ck.tensors.len());
    for (name, t) in ck.tensors.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    put_u32(&mut out, ck.config.len());
    out.extend_from_slice(ck.config.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CliError> {
        if self.bytes.len() - self.pos < n {
            return Err(CliError::CheckpointTruncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, CliError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CliError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CliError::CheckpointMagic);
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(CliError::CheckpointVersion { found: version, supported: VERSION });
    }
    let count = r.u32("tensor count")?;
    let mut tensors = ParameterStore::new();
    for _ in 0..count {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CliError::CheckpointCorrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dims")?);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
            CliError::CheckpointCorrupt(format!("tensor {name} has an overflowing shape"))
        })?;
        let raw = r.take(n.checked_mul(8).ok_or(CliError::CheckpointTruncated("values"))?, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CliError::CheckpointCorrupt(e.to_string()))?;
        tensors.insert(name, t).map_err(|e| CliError::CheckpointCorrupt(e.to_string()))?;
    }
    let len = r.u32("config length")?;
    let config = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| CliError::CheckpointCorrupt("config echo is not UTF-8".into()))?
        .to_string();
    if r.pos != bytes.len() {
        return Err(CliError::CheckpointCorrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { tensors, config })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::MissingCheckpoint {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    decode_checkpoint(&bytes)
}
