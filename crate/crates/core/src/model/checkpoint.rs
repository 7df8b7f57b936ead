//! `SSAM` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "SSAM"
//! version      u32      1
//! config       num_actions u32, num_rules u32, state_dim u32, feature_dim u32,
//!              hidden_count u32, hidden_dims u32 * hidden_count,
//!              temperature f64, activation u8, hard_transition u8,
//!              embed_projection u8
//! epoch        u64      completed training epochs
//! array_count  u32
//! arrays       name_len u32, name utf-8, rank u32, dims u32 * rank,
//!              values f64 * prod(dims)
//! ```
//!
//! Arrays are written in [`Parameters::params`] order followed by any extra
//! arrays (e.g. learned length parameters). Values are stored as raw IEEE
//! bits so a round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::nn::{Activation, Dense, Mlp, ParamArray, Parameters};

const MAGIC: &[u8; 4] = b"SSAM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub epoch: u64,
    pub extras: Vec<ParamArray>,
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            Error::format(
                format!("checkpoint offset {}", self.offset),
                format!("truncated ({e})"),
            )
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn bad(&self, message: impl Into<String>) -> Error {
        Error::format(format!("checkpoint offset {}", self.offset), message)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Parameter(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let cfg = ckpt.model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, cfg.num_actions)?;
    put_u32(&mut out, cfg.num_rules)?;
    put_u32(&mut out, cfg.state_dim)?;
    put_u32(&mut out, cfg.feature_dim)?;
    put_u32(&mut out, cfg.hidden_dims.len())?;
    for &h in &cfg.hidden_dims {
        put_u32(&mut out, h)?;
    }
    out.extend_from_slice(&cfg.temperature.to_bits().to_le_bytes());
    out.push(cfg.activation.code());
    out.push(u8::from(cfg.hard_transition));
    out.push(u8::from(cfg.embed_projection));
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());

    let arrays: Vec<&ParamArray> = ckpt.model.params().into_iter().chain(&ckpt.extras).collect();
    put_u32(&mut out, arrays.len())?;
    for a in arrays {
        put_u32(&mut out, a.name().len())?;
        out.extend_from_slice(a.name().as_bytes());
        put_u32(&mut out, a.shape().len())?;
        for &d in a.shape() {
            put_u32(&mut out, d)?;
        }
        for v in a.values() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let bytes = encode(ckpt)?;
    w.write_all(&bytes)
        .map_err(|e| Error::io("<checkpoint stream>", e))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(ckpt)?).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

pub fn read_checkpoint<R: Read>(inner: R) -> Result<Checkpoint> {
    let mut r = Reader { inner, offset: 0 };
    if r.bytes(4)? != MAGIC {
        return Err(Error::format("checkpoint offset 0", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.bad(format!("unsupported version {version}")));
    }
    let num_actions = r.u32()? as usize;
    let num_rules = r.u32()? as usize;
    let state_dim = r.u32()? as usize;
    let feature_dim = r.u32()? as usize;
    let hidden_count = r.u32()? as usize;
    if hidden_count > 1024 {
        return Err(r.bad(format!("implausible hidden layer count {hidden_count}")));
    }
    let hidden_dims = (0..hidden_count)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let temperature = r.f64()?;
    let activation_code = r.u8()?;
    let activation = Activation::from_code(activation_code)
        .ok_or_else(|| r.bad(format!("unknown activation code {activation_code}")))?;
    let hard_transition = r.u8()? != 0;
    let embed_projection = r.u8()? != 0;
    let config = ModelConfig {
        num_actions,
        num_rules,
        state_dim,
        feature_dim,
        hidden_dims,
        temperature,
        activation,
        hard_transition,
        embed_projection,
    };
    config.validate()?;
    let epoch = r.u64()?;

    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > 4096 {
            return Err(r.bad(format!("implausible name length {name_len}")));
        }
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| r.bad("array name is not utf-8"))?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(r.bad(format!("implausible rank {rank} for {name}")));
        }
        let dims = (0..rank)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        arrays.push(ParamArray::from_values(name, &dims, values)?);
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing).map_err(|e| Error::io("<checkpoint stream>", e))? != 0 {
        return Err(r.bad("trailing bytes after last array"));
    }

    let mut arrays = arrays.into_iter().peekable();
    let mut take = |name: &str| -> Result<ParamArray> {
        match arrays.next() {
            Some(a) if a.name() == name => Ok(a),
            Some(a) => Err(Error::format(
                "checkpoint",
                format!("expected array {name}, found {}", a.name()),
            )),
            None => Err(Error::format("checkpoint", format!("missing array {name}"))),
        }
    };
    let mlp = |prefix: &str, layers: usize, take: &mut dyn FnMut(&str) -> Result<ParamArray>| {
        (0..layers)
            .map(|i| {
                Ok(Dense {
                    weight: take(&format!("{prefix}.{i}.weight"))?,
                    bias: take(&format!("{prefix}.{i}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()
            .and_then(|l| Mlp::from_layers(l, activation))
    };
    let layers = config.hidden_dims.len() + 1;
    let initial_state = take("initial_state")?;
    let rule_scorer = mlp("rule_scorer", layers, &mut take)?;
    let rule_next_state = take("rule_next_state")?;
    let classifier_head = mlp("classifier_head", layers, &mut take)?;
    let projection = if config.embed_projection {
        Some(take("embed_projection")?)
    } else {
        None
    };
    drop(take);
    let extras = arrays.collect();
    let model = ModelParams::from_parts(
        config,
        initial_state,
        rule_scorer,
        rule_next_state,
        classifier_head,
        projection,
    )?;
    Ok(Checkpoint {
        model,
        epoch,
        extras,
    })
}
