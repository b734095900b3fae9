//! Binary checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "XMSSL1"
//! u64 config length, config text (model.* and train.* key=value lines)
//! u64 completed epochs
//! u32 tensor count, then per tensor: u32 name length, name,
//!     u32 rank, u64 dims, f64 values
//! u32 history length, then per epoch: u64 epoch, 7 x f64
//!     (mim, mde, msp, total, alpha, beta, val_total or NaN)
//! u8 optimizer flag; if 1: u64 step, then m and v tensors in parameter order
//! ```

use std::path::Path;

use super::{AdamState, EpochReport, TrainConfig, TrainReport, TrainState};
use crate::config::{KvConfig, KvMap};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"XMSSL1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        self.state.params.config()
    }
}

fn config_text(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut kv = KvMap::new();
    for (k, v) in model.to_kv().iter() {
        kv.insert(format!("model.{k}"), v);
    }
    for (k, v) in train.to_kv().iter() {
        kv.insert(format!("train.{k}"), v);
    }
    kv.to_text()
}

fn put_u32(buf: &mut Vec<u8>, x: usize) {
    buf.extend_from_slice(&(x as u32).to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    put_u32(buf, t.shape().len());
    for &d in t.shape() {
        put_u64(buf, d as u64);
    }
    for x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let params = &ck.state.params;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let cfg = config_text(params.config(), &ck.train_config);
    put_u64(&mut buf, cfg.len() as u64);
    buf.extend_from_slice(cfg.as_bytes());
    put_u64(&mut buf, ck.state.epoch as u64);

    let named = params.named_tensors();
    put_u32(&mut buf, named.len());
    for (name, t) in &named {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_tensor(&mut buf, t);
    }

    put_u32(&mut buf, ck.state.history.epochs.len());
    for e in &ck.state.history.epochs {
        put_u64(&mut buf, e.epoch as u64);
        let t = &e.train;
        for x in [
            t.mim,
            t.mde,
            t.msp,
            t.total,
            t.alpha,
            t.beta,
            e.val_total.unwrap_or(f64::NAN),
        ] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    let adam = &ck.state.adam;
    buf.push(1);
    put_u64(&mut buf, adam.step);
    for t in adam.m.iter().chain(&adam.v) {
        put_tensor(&mut buf, t);
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Validation(format!(
                "checkpoint truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::Validation(format!("checkpoint {what} is not UTF-8")))
    }

    fn tensor(&mut self, what: &str) -> Result<Tensor> {
        let rank = self.u32(what)?;
        if rank == 0 || rank > 8 {
            return Err(Error::Validation(format!(
                "checkpoint {what}: bad rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64(what)? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= (self.bytes.len() - self.pos) / 8)
            .ok_or_else(|| {
                Error::Validation(format!("checkpoint truncated in {what} of shape {shape:?}"))
            })?;
        let data = (0..numel)
            .map(|_| self.f64(what))
            .collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Validation(format!("checkpoint {what}: {e}")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Validation(
            "not a checkpoint or unsupported version (bad magic)".into(),
        ));
    }
    let cfg_len = r.u64("config length")? as usize;
    let text = r.string(cfg_len.min(bytes.len()), "config")?;
    let mut kv = KvMap::parse(&text)?;
    let model_cfg = ModelConfig::from_kv(kv.split_prefix("model"))?;
    let train_cfg = TrainConfig::from_kv(kv.split_prefix("train"))?;
    kv.finish()?;
    let epoch = r.u64("epoch")? as usize;

    let expected: Vec<(String, Vec<usize>)> = ModelParams::init(&model_cfg)?
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32("tensor count")?;
    if count != expected.len() {
        return Err(Error::Validation(format!(
            "checkpoint has {count} tensors, config implies {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let len = r.u32("tensor name length")?;
        let got = r.string(len, "tensor name")?;
        if &got != name {
            return Err(Error::Validation(format!(
                "checkpoint tensor `{got}` where `{name}` was expected"
            )));
        }
        let t = r.tensor(name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Validation(format!(
                "checkpoint tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        tensors.push(t);
    }
    let params = ModelParams::from_tensors(&model_cfg, tensors)?;

    let hist_len = r.u32("history length")?;
    let mut history = TrainReport::default();
    for _ in 0..hist_len {
        let e = r.u64("history epoch")? as usize;
        let mut v = [0.0; 7];
        for x in &mut v {
            *x = r.f64("history row")?;
        }
        history.epochs.push(EpochReport {
            epoch: e,
            train: LossBreakdown {
                mim: v[0],
                mde: v[1],
                msp: v[2],
                total: v[3],
                alpha: v[4],
                beta: v[5],
            },
            val_total: (!v[6].is_nan()).then_some(v[6]),
            seconds: None,
        });
    }

    let adam = match r.u8("optimizer flag")? {
        0 => AdamState::zeros_like(&params.tensors()),
        1 => {
            let step = r.u64("optimizer step")?;
            let n = expected.len();
            let mut all = Vec::with_capacity(2 * n);
            for i in 0..2 * n {
                all.push(r.tensor(&format!("optimizer moment {i}"))?);
            }
            let v = all.split_off(n);
            let st = AdamState { m: all, v, step };
            st.check_shapes(&params.tensors())
                .map_err(|e| Error::Validation(e.to_string()))?;
            st
        }
        f => return Err(Error::Validation(format!("bad optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Validation(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        train_config: train_cfg,
        state: TrainState {
            params,
            adam,
            epoch,
            history,
        },
    })
}

/// Writes to a sibling temp file and renames it into place, so a reader
/// never sees a half-written checkpoint.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
