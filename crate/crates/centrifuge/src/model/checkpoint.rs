//! Single-file checkpoint: model config JSON, training step, every named
//! parameter tensor, normalization statistics, and any extra tensors the
//! caller wants alongside (optimizer state). Payloads are raw little-endian
//! scalars, so a reload reproduces eval outputs bit-identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::Scalar;

use super::{ModelConfig, SeparationModel};

const MAGIC: &[u8; 4] = b"VCPT";
const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serialize model (and optional extra tensors, e.g. optimizer velocities)
/// to `path`, atomically.
pub fn save_checkpoint<S: Scalar>(
    model: &mut SeparationModel<S>,
    extra: &[(String, Vec<S>)],
    path: &Path,
) -> Result<()> {
    let mut tensors: Vec<(String, Vec<S>)> = Vec::new();
    model.visit_params(&mut |name, w, _| tensors.push((format!("param.{name}"), w.clone())));
    model.visit_state(&mut |name, v| tensors.push((format!("state.{name}"), v.clone())));
    for (name, v) in extra {
        tensors.push((format!("extra.{name}"), v.clone()));
    }

    let config_json = serde_json::to_vec(&model.config)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, S::DTYPE);
    push_u64(&mut out, model.step);
    push_u64(&mut out, config_json.len() as u64);
    out.extend_from_slice(&config_json);
    push_u64(&mut out, tensors.len() as u64);
    for (name, data) in &tensors {
        push_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        push_u64(&mut out, data.len() as u64);
        for &v in data {
            v.write_le(&mut out);
        }
    }
    crate::videoio::write_atomic(path, &out)
}

/// Rebuild a model from a checkpoint; returns it together with the extra
/// tensors stored alongside.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(SeparationModel<S>, Vec<(String, Vec<S>)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic (not a checkpoint)"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let dtype = cur.u32()?;
    if dtype != S::DTYPE {
        return Err(Error::format(
            path,
            format!("checkpoint dtype tag {dtype} does not match requested scalar ({})", S::DTYPE),
        ));
    }
    let step = cur.u64()?;
    let config_len = cur.u64()? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(config_len)?)
        .map_err(|e| Error::format(path, format!("bad config json: {e}")))?;
    let n_tensors = cur.u64()? as usize;
    let mut map: BTreeMap<String, Vec<S>> = BTreeMap::new();
    for _ in 0..n_tensors {
        let name_len = cur.u64()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not utf-8"))?;
        let data_len = cur.u64()? as usize;
        let raw = cur.take(data_len * S::BYTES)?;
        let data: Vec<S> = raw.chunks_exact(S::BYTES).map(S::read_le).collect();
        map.insert(name, data);
    }

    let mut model = SeparationModel::<S>::build(&config)?;
    model.step = step;
    let mut missing: Vec<String> = Vec::new();
    model.visit_params(&mut |name, w, _| {
        let key = format!("param.{name}");
        match map.remove(&key) {
            Some(data) if data.len() == w.len() => *w = data,
            Some(_) => missing.push(format!("{key} (wrong size)")),
            None => missing.push(key),
        }
    });
    model.visit_state(&mut |name, v| {
        let key = format!("state.{name}");
        match map.remove(&key) {
            Some(data) if data.len() == v.len() => *v = data,
            Some(_) => missing.push(format!("{key} (wrong size)")),
            None => missing.push(key),
        }
    });
    if !missing.is_empty() {
        return Err(Error::format(path, format!("checkpoint missing tensors: {}", missing.join(", "))));
    }
    let extra = map
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix("extra.").map(|name| (name.to_string(), v)))
        .collect();
    Ok((model, extra))
}
