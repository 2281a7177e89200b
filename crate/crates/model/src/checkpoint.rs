//! Checkpoint container: a JSON metadata block plus named tensors
//! (dtype, shape, row-major little-endian payload), each guarded by a
//! CRC32 and the whole file by a trailing CRC32. Encoding is
//! deterministic: tensors serialize in insertion order.

use crate::error::{ModelError, Result};
use serde_json::Value;
use skinssl_sim::format::crc32;
use skinssl_tensor::Tensor;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"SKCP";
const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    fn dtype(&self) -> u8 {
        match self {
            AnyTensor::F32(_) => DTYPE_F32,
            AnyTensor::F64(_) => DTYPE_F64,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            AnyTensor::F32(t) => t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
            AnyTensor::F64(t) => t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    tensors: Vec<(String, AnyTensor)>,
}

impl Checkpoint {
    pub fn new(meta: Value) -> Self {
        Checkpoint { meta, tensors: Vec::new() }
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, t: &Tensor<f32>) {
        self.tensors.push((name.into(), AnyTensor::F32(t.clone())));
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, t: &Tensor<f64>) {
        self.tensors.push((name.into(), AnyTensor::F64(t.clone())));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    fn find(&self, name: &str) -> Result<&AnyTensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor \"{name}\"")))
    }

    pub fn get_f32(&self, name: &str) -> Result<Tensor<f32>> {
        match self.find(name)? {
            AnyTensor::F32(t) => Ok(t.clone()),
            AnyTensor::F64(_) => {
                Err(ModelError::Checkpoint(format!("tensor \"{name}\" is float64, wanted float32")))
            }
        }
    }

    pub fn get_f64(&self, name: &str) -> Result<Tensor<f64>> {
        match self.find(name)? {
            AnyTensor::F64(t) => Ok(t.clone()),
            AnyTensor::F32(_) => {
                Err(ModelError::Checkpoint(format!("tensor \"{name}\" is float32, wanted float64")))
            }
        }
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing meta field \"{key}\"")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| ModelError::Checkpoint(format!("missing meta field \"{key}\"")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.dtype());
            let shape = t.shape();
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            let payload = t.payload();
            out.extend_from_slice(&payload);
            out.extend_from_slice(&crc32(&payload).to_le_bytes());
        }
        let total = crc32(&out);
        out.extend_from_slice(&total.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let corrupt = |what: &str| ModelError::Checkpoint(format!("corrupt checkpoint: {what}"));
        if bytes.len() < 4 + 4 + 4 + 4 + 4 {
            return Err(corrupt("truncated header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32(body) != stored {
            return Err(corrupt("file checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.bytes(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: Value = serde_json::from_slice(r.bytes(meta_len)?)
            .map_err(|e| corrupt(&format!("metadata is not valid JSON: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.bytes(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let width = match dtype {
                DTYPE_F32 => 4,
                DTYPE_F64 => 8,
                other => return Err(corrupt(&format!("tensor \"{name}\" has unknown dtype {other}"))),
            };
            let payload = r.bytes(n * width)?;
            let stored = r.u32()?;
            if crc32(payload) != stored {
                return Err(ModelError::Checkpoint(format!(
                    "corrupt checkpoint: tensor \"{name}\" failed its checksum"
                )));
            }
            let tensor = match dtype {
                DTYPE_F32 => AnyTensor::F32(Tensor::new(
                    &shape,
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )),
                _ => AnyTensor::F64(Tensor::new(
                    &shape,
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )),
            };
            tensors.push((name, tensor));
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after last tensor"));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Atomic save: write to a sibling temp file, fsync, rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.encode())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| {
            ModelError::Checkpoint(format!("cannot read checkpoint {}: {e}", path.display()))
        })?;
        Checkpoint::decode(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::Checkpoint("corrupt checkpoint: unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
}
