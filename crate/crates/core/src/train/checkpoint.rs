//! Binary checkpoint: magic `DASG`, u32 version, length-prefixed config
//! digest and config JSON, u64 step, u64 optimizer step, then three
//! count-prefixed tensor sections (parameters, first moments, second
//! moments). Each tensor is a length-prefixed name, u32 rank, u64 extents
//! and f64 values. Little-endian throughout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DomainClassifier, ParamStore, SegNet, UNetConfig};
use crate::rng::hex_digest;
use crate::tensor::Tensor;
use crate::train::adam::Adam;
use crate::train::config::TrainConfig;
use crate::train::engine::{Phase, Trainer};

pub const MAGIC: &[u8; 4] = b"DASG";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    net: UNetConfig,
    phase: Phase,
    train: TrainConfig,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }

    fn section(&mut self, store: &ParamStore) {
        self.u32(store.len() as u32);
        for (name, t) in store.iter() {
            self.bytes(name.as_bytes());
            self.u32(t.shape().len() as u32);
            for &d in t.shape() {
                self.u64(d as u64);
            }
            for v in t.data() {
                self.0.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }

    fn section(&mut self) -> Result<ParamStore> {
        let count = self.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(self.u64()? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::Format(format!("tensor {name}: extents overflow")))?;
            let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
            store.insert(name, t).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(store)
    }
}

impl Trainer {
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let meta = Meta { net: self.net.config().clone(), phase: self.phase, train: self.config.clone() };
        let json = serde_json::to_vec(&meta).expect("meta serializes");
        let mut w = Writer::default();
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.bytes(hex_digest(&json).as_bytes());
        w.bytes(&json);
        w.u64(self.step as u64);
        w.u64(self.adam.t);
        let mut params = self.net.params().clone();
        for c in &self.classifiers {
            params.extend(c.params()).expect("disjoint names");
        }
        w.section(&params);
        w.section(&self.adam.m);
        w.section(&self.adam.v);
        w.0
    }

    /// Writes via a temporary file and rename, so readers never observe a
    /// half-written checkpoint.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.checkpoint_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// Loads and checks that the stored training config equals `expected`.
    pub fn resume(path: &Path, expected: &TrainConfig) -> Result<Trainer> {
        let t = Self::load_checkpoint(path)?;
        if t.config.digest() != expected.digest() {
            return Err(Error::Incompatible(format!(
                "checkpoint config digest {} differs from requested {}",
                t.config.digest(),
                expected.digest()
            )));
        }
        Ok(t)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Trainer> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Incompatible(format!("checkpoint version {version}, this build reads {VERSION}")));
        }
        let digest = r.string()?;
        let json = r.bytes()?;
        if hex_digest(json) != digest {
            return Err(Error::Incompatible(format!("checkpoint config digest {digest} does not match its config")));
        }
        let meta: Meta = serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let step = r.u64()? as usize;
        let t = r.u64()?;
        let params = r.section()?;
        let m = r.section()?;
        let v = r.section()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }

        let mut net_params = ParamStore::new();
        let mut by_level: Vec<(usize, ParamStore)> = Vec::new();
        for (name, tensor) in params.iter() {
            match classifier_level(name) {
                None => net_params.insert(name, tensor.clone())?,
                Some(level) => {
                    if by_level.last().map(|(l, _)| *l) != Some(level) {
                        by_level.push((level, ParamStore::new()));
                    }
                    by_level.last_mut().expect("pushed").1.insert(name, tensor.clone())?;
                }
            }
        }
        let bad = |e: Error| Error::Format(format!("checkpoint parameters: {e}"));
        let net = SegNet::from_params(meta.net, net_params).map_err(bad)?;
        let classifiers = by_level
            .into_iter()
            .map(|(level, p)| DomainClassifier::from_params(level, p))
            .collect::<Result<Vec<_>>>()
            .map_err(bad)?;
        let adam = Adam { config: meta.train.optimizer.clone(), t, m, v };
        Ok(Trainer::from_parts(meta.train, meta.phase, net, classifiers, adam, step))
    }
}

fn classifier_level(name: &str) -> Option<usize> {
    let rest = name.strip_prefix("dann.l")?;
    rest.split('.').next()?.parse().ok()
}
