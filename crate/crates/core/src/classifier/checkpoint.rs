//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `b"FMCKPT\0\0"`, `u32` version, `u64` header length, JSON header, `u32` tensor
//! count, then per tensor: `u8` kind (0 weight, 1 buffer, 2 momentum), `u32` name
//! length, UTF-8 name, `u32` rank, `u64` dims, `f32` payload.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ModelParams, Param};
use super::{ClassifierError, NetConfig};

const MAGIC: &[u8; 8] = b"FMCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    #[serde(default)]
    meta: serde_json::Value,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ClassifierError + '_ {
    move |source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serializes weights, running statistics and momentum, plus free-form metadata.
pub fn write_checkpoint<W: Write>(
    params: &ModelParams<f32>,
    meta: &serde_json::Value,
    mut out: W,
) -> std::io::Result<()> {
    let header = serde_json::to_vec(&Header {
        net: params.config().clone(),
        meta: meta.clone(),
    })?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let count = 2 * params.params().len() + params.buffers().len();
    out.write_all(&(count as u32).to_le_bytes())?;
    let mut put = |kind: u8, name: &str, shape: &[usize], data: &[f32]| -> std::io::Result<()> {
        out.write_all(&[kind])?;
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    };
    for p in params.params() {
        put(0, &p.name, &p.shape, &p.data)?;
    }
    for b in params.buffers() {
        put(1, &b.name, &b.shape, &b.data)?;
    }
    for (p, v) in params.params().iter().zip(params.velocity()) {
        put(2, &p.name, &p.shape, v)?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ClassifierError::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ClassifierError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ClassifierError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, ClassifierError> {
        usize::try_from(self.u64()?).map_err(|_| ClassifierError::Checkpoint("length overflow".into()))
    }
}

/// Parses a checkpoint, returning the model and its metadata.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelParams<f32>, serde_json::Value), ClassifierError> {
    let bad = |m: String| ClassifierError::Checkpoint(m);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = r.len()?;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
    let count = r.u32()? as usize;
    let (mut params, mut buffers, mut velocity) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..count {
        let kind = r.u8()?;
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| bad("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad(format!("tensor {name} too large")))?;
        let data: Vec<f32> = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let p = Param { name, shape, data };
        match kind {
            0 => params.push(p),
            1 => buffers.push(p),
            2 => velocity.push(p),
            k => return Err(bad(format!("unknown tensor kind {k}"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    let velocity = if velocity.is_empty() {
        None
    } else {
        if velocity.iter().zip(&params).any(|(v, p)| v.name != p.name) {
            return Err(bad("momentum tensors do not match weights".into()));
        }
        Some(velocity.into_iter().map(|v| v.data).collect())
    };
    let model = ModelParams::from_parts(&header.net, params, buffers, velocity)?;
    Ok((model, header.meta))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams<f32>,
    meta: &serde_json::Value,
) -> Result<(), ClassifierError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(params, meta, &mut buf).map_err(io_err(path))?;
    std::fs::write(path, buf).map_err(io_err(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams<f32>, serde_json::Value), ClassifierError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{sgd_step, Gradients, TrainConfig};

    fn trained_like() -> ModelParams<f32> {
        let mut m = ModelParams::<f32>::new(&NetConfig::tiny(), 9).unwrap();
        let g = Gradients {
            grads: m
                .params()
                .iter()
                .map(|p| (0..p.data.len()).map(|i| (i as f32 * 0.37).sin()).collect())
                .collect(),
        };
        sgd_step(&mut m, &g, &TrainConfig::default(), 0.1).unwrap();
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = trained_like();
        let meta = serde_json::json!({"epochs": 3});
        let mut buf = Vec::new();
        write_checkpoint(&m, &meta, &mut buf).unwrap();
        let (back, meta2) = read_checkpoint(&buf).unwrap();
        assert_eq!(meta2, meta);
        for (a, b) in m.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_checkpoint(&back, &meta, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = trained_like();
        let mut buf = Vec::new();
        write_checkpoint(&m, &serde_json::Value::Null, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).is_err());
        let mut long = buf;
        long.push(0);
        assert!(read_checkpoint(&long).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = trained_like();
        save_checkpoint(&path, &m, &serde_json::Value::Null).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().0, m);
    }
}
