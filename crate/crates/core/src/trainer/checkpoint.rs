//! Checkpoint container.
//!
//! Little-endian layout:
//!
//! | field | type |
//! |---|---|
//! | magic | 8 bytes `FLOWSRCK` |
//! | version | u32 |
//! | step | u64 |
//! | optimiser update count | u64 |
//! | config length, config | u32, UTF-8 TOML |
//! | entry count | u32 |
//! | entries | name length u16, name, rank u8, dims u32 x rank, byte offset u64, element count u64 |
//! | data length | u64 |
//! | data | f32 arrays |
//! | checksum | SHA-256 of everything above |
//!
//! Entries are `param.<name>`, `adam.m.<name>` and `adam.v.<name>`.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, TrainConfig};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Params;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLOWSRCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub model: Model<f32>,
    pub adam: Adam<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Snapshot {
    network: NetworkConfig,
    train: TrainConfig,
}

struct Entry {
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let config = toml::to_string(&Snapshot {
        network: ck.network,
        train: ck.train,
    })
    .map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))?;

    let mut arrays: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    ck.model
        .visit("", &mut |name, shape, d| arrays.push((name.to_string(), shape.to_vec(), d.to_vec())));
    if ck.adam.m.len() != ck.model.num_params() {
        return Err(Error::Checkpoint("optimiser state does not match the model".into()));
    }

    let mut names = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: &[usize], values: &[f32], data: &mut Vec<u8>| {
        names.push((name, shape.to_vec(), data.len(), values.len()));
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, shape, values) in &arrays {
        push(format!("param.{name}"), shape, values, &mut data);
    }
    for (tag, moments) in [("m", &ck.adam.m), ("v", &ck.adam.v)] {
        let mut pos = 0;
        for (name, shape, _) in &arrays {
            let n: usize = shape.iter().product();
            push(format!("adam.{tag}.{name}"), shape, &moments[pos..pos + n], &mut data);
            pos += n;
        }
    }

    let mut out = Vec::with_capacity(data.len() + 4096);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&ck.adam.steps.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for (name, shape, offset, len) in &names {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(*offset as u64).to_le_bytes());
        out.extend_from_slice(&(*len as u64).to_le_bytes());
    }
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(&data);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + DIGEST_LEN {
        return Err(Error::Checkpoint("checksum mismatch: file truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let step = r.u64()?;
    let adam_steps = r.u64()?;
    let config_len = r.u32()? as usize;
    let snapshot: Snapshot = toml::from_str(r.str(config_len)?)
        .map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))?;

    let count = r.u32()? as usize;
    let mut entries = HashMap::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = r.str(n)?.to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        entries.insert(name, Entry { shape, offset, len });
    }
    let data_len = r.u64()? as usize;
    let data = r.take(data_len)?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after data section".into()));
    }

    let read = |key: &str, shape: &[usize], out: &mut [f32]| -> Result<()> {
        let e = entries
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {key}")))?;
        if e.shape != shape || e.len != out.len() {
            return Err(Error::Checkpoint(format!(
                "array {key} has shape {:?}, model expects {shape:?}",
                e.shape
            )));
        }
        let bytes = data
            .get(e.offset..e.offset + 4 * e.len)
            .ok_or_else(|| Error::Checkpoint(format!("array {key} out of bounds")))?;
        for (v, b) in out.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
        Ok(())
    };

    let mut model = Model::<f32>::zeroed(snapshot.network)
        .map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))?;
    let mut status = Ok(());
    model.visit_mut("", &mut |name, shape, d| {
        if status.is_ok() {
            status = read(&format!("param.{name}"), shape, d);
        }
    });
    status?;
    let t = snapshot.train;
    let mut adam = Adam::new(model.num_params(), t.adam_beta1, t.adam_beta2, t.adam_epsilon);
    adam.steps = adam_steps;
    let mut pos = 0;
    let mut status = Ok(());
    model.visit("", &mut |name, shape, d| {
        let n = d.len();
        if status.is_ok() {
            status = read(&format!("adam.m.{name}"), shape, &mut adam.m[pos..pos + n])
                .and_then(|_| read(&format!("adam.v.{name}"), shape, &mut adam.v[pos..pos + n]));
        }
        pos += n;
    });
    status?;

    Ok(Checkpoint {
        step,
        network: snapshot.network,
        train: snapshot.train,
        model,
        adam,
    })
}

/// Writes atomically: a temporary file in the same directory is renamed
/// over `path`.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e.to_string()))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn sample_checkpoint() -> Checkpoint {
        let network = NetworkConfig::desk(2).with_channels(8);
        let train = TrainConfig::desk();
        let model = Model::<f32>::initialized(network, 3).unwrap();
        let mut adam = Adam::new(model.num_params(), 0.9, 0.999, 1e-8);
        for (i, (m, v)) in adam.m.iter_mut().zip(adam.v.iter_mut()).enumerate() {
            *m = i as f32 * 1e-3;
            *v = (i % 7) as f32 * 1e-5;
        }
        adam.steps = 17;
        Checkpoint {
            step: 17,
            network,
            train,
            model,
            adam,
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        let ck = sample_checkpoint();
        let back = decode(&encode(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
        let lr: Vec<Tensor<f32>> = (0..3)
            .map(|k| Tensor::from_vec(1, 8, 8, (0..64).map(|i| ((i * 7 + k) % 11) as f32 / 11.0).collect()).unwrap())
            .collect();
        let a = ck.model.super_resolve_tensors(&lr).unwrap();
        let b = back.model.super_resolve_tensors(&lr).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn corruption_and_version() {
        let bytes = encode(&sample_checkpoint()).unwrap();
        let truncated = &bytes[..bytes.len() - 100];
        assert!(matches!(decode(truncated), Err(Error::Checkpoint(m)) if m.contains("checksum")));
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::Checkpoint(m)) if m.contains("checksum")));

        let mut v2 = bytes[..bytes.len() - DIGEST_LEN].to_vec();
        v2[8..12].copy_from_slice(&2u32.to_le_bytes());
        let digest = Sha256::digest(&v2);
        v2.extend_from_slice(&digest);
        assert!(matches!(decode(&v2), Err(Error::Checkpoint(m)) if m.contains("version 2")));
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.ckpt");
        let ck = sample_checkpoint();
        save_checkpoint(&ck, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
