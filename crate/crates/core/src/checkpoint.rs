//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TDDNCKPT"
//! version  u32
//! header   u32 length + UTF-8 key=value text (config, subset, columns, R_max)
//! count    u32 number of named arrays
//! arrays   per array: u16 name length, name, u8 ndim, ndim x u64 dims,
//!          product(dims) x f64
//! digest   32-byte SHA-256 of everything above
//! ```
//!
//! The scaler's min/max vectors are stored as arrays `scaler.min` and
//! `scaler.max` ahead of the network parameters.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::cmapss::SubsetId;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{TddnConfig, TddnModel, TddnParams};
use crate::preprocess::{Column, LabelPolicy, Preprocessor, Scaler, SensorSelection};
use crate::tensor::{Param, Tensor};
use crate::training::TrainedModel;

const MAGIC: &[u8; 8] = b"TDDNCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn header(tm: &TrainedModel) -> KeyValues {
    let c = &tm.model.config;
    let p = &tm.preprocessor;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let mut kv = KeyValues::new();
    kv.set("subset", p.selection.subset);
    kv.set("window", c.w);
    kv.set("m", c.m);
    kv.set("conv_channels", join(&c.conv_channels));
    kv.set("regressor_hidden", c.regressor_hidden);
    kv.set("seed", c.seed);
    kv.set("r_max", format!("{:?}", p.policy.r_max));
    kv.set(
        "columns",
        p.selection
            .columns
            .iter()
            .map(Column::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    kv
}

fn put_array(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(t.shape().len() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(tm: &TrainedModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let text = header(tm).to_string();
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());

    let scaler = &tm.preprocessor.scaler;
    let m = scaler.min.len();
    let arrays: Vec<(&str, Tensor)> = [
        ("scaler.min", Tensor::from_vec(&[m], scaler.min.clone()).expect("1-d")),
        ("scaler.max", Tensor::from_vec(&[m], scaler.max.clone()).expect("1-d")),
    ]
    .into_iter()
    .collect();
    let params: Vec<&Param> = tm.model.params.iter().collect();
    buf.extend_from_slice(&((arrays.len() + params.len()) as u32).to_le_bytes());
    for (name, t) in &arrays {
        put_array(&mut buf, name, t);
    }
    for p in params {
        put_array(&mut buf, &p.name, &p.value);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
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

    fn array(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        let ndim = self.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("array {name} too large")))?;
        let raw = self.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((name, t))
    }
}

fn list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad list entry `{p}`")))
        })
        .collect()
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("integrity check failed (digest mismatch)".into()));
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(hlen)?)
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let kv = KeyValues::parse(text)?;
    let get = |k: &str| kv.require(k).map_err(|e| Error::Checkpoint(e.to_string()));
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad value for {k}")))
    };

    let subset: SubsetId = get("subset")?.parse()?;
    let config = TddnConfig {
        w: num("window")? as usize,
        m: num("m")? as usize,
        conv_channels: list(get("conv_channels")?)?,
        regressor_hidden: num("regressor_hidden")? as usize,
        seed: num("seed")?,
    };
    let r_max: f64 = get("r_max")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad r_max".into()))?;
    let columns: Vec<Column> = get("columns")?
        .split(',')
        .map(str::parse)
        .collect::<Result<_>>()?;

    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        arrays.push(r.array()?);
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after arrays".into()));
    }
    let mut it = arrays.into_iter();
    let mut next_named = |want: &str| -> Result<Tensor> {
        match it.next() {
            Some((name, t)) if name == want => Ok(t),
            Some((name, _)) => Err(Error::Checkpoint(format!("expected {want}, found {name}"))),
            None => Err(Error::Checkpoint(format!("missing array {want}"))),
        }
    };
    let min = next_named("scaler.min")?.into_vec();
    let max = next_named("scaler.max")?.into_vec();
    if min.len() != columns.len() || max.len() != columns.len() {
        return Err(Error::Checkpoint("scaler size does not match columns".into()));
    }

    let mut params = TddnParams::init(&config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    for p in params.iter_mut() {
        let t = next_named(&p.name)?;
        if t.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{} has shape {:?}, config implies {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    if it.next().is_some() {
        return Err(Error::Checkpoint("unexpected extra arrays".into()));
    }

    let model = TddnModel::from_parts(config, params)?;
    let preprocessor = Preprocessor {
        selection: SensorSelection {
            subset,
            columns: columns.clone(),
        },
        scaler: Scaler { columns, min, max },
        policy: LabelPolicy::new(r_max)?,
        w: model.config.w,
    };
    model.check_preprocessor(&preprocessor)?;
    Ok(TrainedModel {
        model,
        preprocessor,
    })
}

pub fn save(path: &Path, tm: &TrainedModel) -> Result<()> {
    std::fs::write(path, to_bytes(tm)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
