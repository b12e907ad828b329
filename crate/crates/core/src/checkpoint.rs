//! Binary checkpoint encoding.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "GATRAJCK"
//! version      u32
//! config_hash  u64      FNV-1a of the config text
//! config_len   u32
//! config       config_len bytes of UTF-8 `key = value` text
//! step         u64
//! adam_t       u64
//! adam_skipped u64
//! n_tensors    u32
//! per tensor:
//!   name_len u32, name bytes
//!   ndim u32, ndim x u64 dims
//!   values, adam m, adam v   (3 x numel x f64)
//! checksum     u64      FNV-1a of every preceding byte
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::model::fnv1a;
use crate::nn::ParamStore;
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::train::{Checkpoint, TrainConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GATRAJCK";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::CorruptCheckpoint("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::CorruptCheckpoint("size"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::CorruptCheckpoint("invalid UTF-8"))
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(ck.config.hash());
    w.bytes(ck.config.to_text().as_bytes());
    w.u64(ck.step);
    w.u64(ck.adam.t);
    w.u64(ck.adam.skipped);
    w.u32(ck.params.len() as u32);
    for (i, e) in ck.params.entries().iter().enumerate() {
        w.bytes(e.name.as_bytes());
        w.u32(e.tensor.shape().len() as u32);
        for &d in e.tensor.shape() {
            w.u64(d as u64);
        }
        w.f64s(e.tensor.data());
        w.f64s(&ck.adam.m[i]);
        w.f64s(&ck.adam.v[i]);
    }
    let sum = fnv1a(&w.0);
    w.u64(sum);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..8] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic"));
    }
    let mut r = Reader { buf: bytes, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < 20 {
        return Err(Error::CorruptCheckpoint("truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::CorruptCheckpoint("checksum mismatch"));
    }
    let r_body = &mut Reader {
        buf: body,
        pos: r.pos,
    };
    let hash = r_body.u64()?;
    let text = r_body.string()?;
    let config = TrainConfig::parse(&text)?;
    if config.hash() != hash {
        return Err(Error::ConfigHashMismatch {
            expected: hash,
            found: config.hash(),
        });
    }
    let step = r_body.u64()?;
    let t = r_body.u64()?;
    let skipped = r_body.u64()?;
    let n = r_body.u32()? as usize;
    let mut params = ParamStore::new();
    let mut adam = Adam::new(&params);
    for _ in 0..n {
        let name = r_body.string()?;
        let ndim = r_body.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r_body.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(Error::CorruptCheckpoint("tensor size"))?;
        let data = r_body.f64s(numel)?;
        adam.m.push(r_body.f64s(numel)?);
        adam.v.push(r_body.f64s(numel)?);
        params.add(name, Tensor::new(&shape, data)?);
    }
    if r_body.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes"));
    }
    adam.t = t;
    adam.skipped = skipped;
    let ck = Checkpoint {
        config,
        params,
        adam,
        step,
    };
    // Catches tensor tables that do not fit the stated architecture.
    ck.model()?;
    Ok(ck)
}
