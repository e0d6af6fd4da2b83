//! Binary checkpoints.
//!
//! Layout (all integers little-endian): magic `ESSL`, format version `u32`,
//! entry count `u32`, then per entry: name length `u16`, UTF-8 name, role
//! byte, rank `u8`, `rank` dims as `u32`, payload as `f64`.
//!
//! Online parameters keep their names. Target parameters are prefixed with
//! `target/`, optimizer moments with `adam.m/` and `adam.v/`, and scalar
//! counters live under `meta/`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{Param, ParamSet, Role};
use crate::train::optim::AdamState;
use crate::train::TrainState;

pub const MAGIC: &[u8; 4] = b"ESSL";
pub const FORMAT_VERSION: u32 = 1;

const BUFFER_BIT: u8 = 0x80;
const META_ROLE: u8 = 0x40;
const TARGET_PREFIX: &str = "target/";
const ADAM_M_PREFIX: &str = "adam.m/";
const ADAM_V_PREFIX: &str = "adam.v/";
const META_STEP: &str = "meta/step";
const META_ADAM_T: &str = "meta/adam_t";

struct Entry {
    name: String,
    role: u8,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn role_byte(p: &Param) -> u8 {
    p.role as u8 | if p.trainable { 0 } else { BUFFER_BIT }
}

fn entries_of(prefix: &str, set: &ParamSet, out: &mut Vec<Entry>) {
    for p in set.iter() {
        out.push(Entry {
            name: format!("{prefix}{}", p.name),
            role: role_byte(p),
            shape: p.shape.clone(),
            data: p.data.clone(),
        });
    }
}

fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        buf.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.push(e.role);
        buf.push(e.shape.len() as u8);
        for d in &e.shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::CorruptCheckpoint("entry name is not UTF-8".into()))?
            .to_string();
        let role = r.u8()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(8).ok_or_else(|| Error::CorruptCheckpoint("shape overflow".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        entries.push(Entry { name, role, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn save_checkpoint(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    entries_of("", &state.online, &mut entries);
    entries_of(TARGET_PREFIX, &state.target, &mut entries);
    entries_of(ADAM_M_PREFIX, &state.opt.m, &mut entries);
    entries_of(ADAM_V_PREFIX, &state.opt.v, &mut entries);
    for (name, v) in [(META_STEP, state.step), (META_ADAM_T, state.opt.t)] {
        entries.push(Entry {
            name: name.into(),
            role: META_ROLE,
            shape: vec![1],
            data: vec![v as f64],
        });
    }
    fs::write(path, encode(&entries)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let entries = decode(&bytes)?;
    let mut online = ParamSet::new();
    let mut target = ParamSet::new();
    let mut m = ParamSet::new();
    let mut v = ParamSet::new();
    let mut step = None;
    let mut adam_t = None;
    for e in entries {
        if e.role == META_ROLE {
            let value = e.data.first().copied().unwrap_or(f64::NAN);
            if !(value >= 0.0 && value.fract() == 0.0) {
                return Err(Error::CorruptCheckpoint(format!("{} is not a counter", e.name)));
            }
            match e.name.as_str() {
                META_STEP => step = Some(value as u64),
                META_ADAM_T => adam_t = Some(value as u64),
                other => return Err(Error::CorruptCheckpoint(format!("unknown meta entry {other}"))),
            }
            continue;
        }
        let role = Role::from_u8(e.role & !BUFFER_BIT)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("bad role byte {} for {}", e.role, e.name)))?;
        let (set, name) = if let Some(n) = e.name.strip_prefix(TARGET_PREFIX) {
            (&mut target, n)
        } else if let Some(n) = e.name.strip_prefix(ADAM_M_PREFIX) {
            (&mut m, n)
        } else if let Some(n) = e.name.strip_prefix(ADAM_V_PREFIX) {
            (&mut v, n)
        } else {
            (&mut online, e.name.as_str())
        };
        set.insert(Param {
            name: name.to_string(),
            role,
            shape: e.shape,
            data: e.data,
            trainable: e.role & BUFFER_BIT == 0,
        })
        .map_err(|err| Error::CorruptCheckpoint(err.to_string()))?;
    }
    let (Some(step), Some(t)) = (step, adam_t) else {
        return Err(Error::CorruptCheckpoint("missing step counters".into()));
    };
    online.check_same_schema(&m)?;
    online.check_same_schema(&v)?;
    Ok(TrainState {
        online,
        target,
        opt: AdamState { m, v, t },
        step,
    })
}
