//! Binary checkpoint format.
//!
//! ```text
//! "CEGAN" | u8 version | u32 blob length | blob (UTF-8 `key = value` lines)
//! u32 tensor count
//! per tensor: u16 name length | name | u8 dtype (0 = f32) | u8 rank | u32 dims… | f32 payload
//! ```
//! All integers and floats are little-endian. Tensors are written in name
//! order, so equal states produce equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{AdamState, ParamSet};
use crate::model::{Network, Role};
use crate::tensor::Tensor;

use super::config::{parse_channels, parse_key_values};
use super::{TrainConfig, Trainer};

pub const MAGIC: &[u8; 5] = b"CEGAN";
pub const VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

fn prefix(role: Role) -> &'static str {
    match role {
        Role::Generator => "gen",
        Role::Discriminator => "disc",
    }
}

fn blob(t: &Trainer) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    for (k, v) in t.cfg.to_pairs() {
        line(k, v);
    }
    let spec = t.generator.spec();
    line("model.image-size", spec.image_size.to_string());
    line("model.channels", spec.channels.map(|c| c.to_string()).join(","));
    line("model.in-channels", spec.in_channels.to_string());
    line("model.mask-channel", spec.include_mask_channel.to_string());
    line("model.batch-norm", spec.use_batch_norm.to_string());
    line("iteration", t.iteration.to_string());
    line("adam.gen.steps", t.opt_g.step_count().to_string());
    line("adam.disc.steps", t.opt_d.step_count().to_string());
    // Every random draw is a function of (seed, iteration); that pair is the
    // complete generator state.
    line("rng.seed", t.cfg.seed.to_string());
    line("rng.iteration", t.iteration.to_string());
    out
}

fn named_tensors(t: &Trainer) -> Result<BTreeMap<String, Tensor<f32>>> {
    let mut all = BTreeMap::new();
    for (net, opt) in [(&t.generator, &t.opt_g), (&t.discriminator, &t.opt_d)] {
        let p = prefix(net.role());
        for (name, tensor) in net.params.iter() {
            all.insert(format!("{p}.param.{name}"), tensor.clone());
        }
        for (name, tensor) in net.buffers.iter() {
            all.insert(format!("{p}.buffer.{name}"), tensor.clone());
        }
        for (name, m, v) in opt.moments() {
            let shape = net
                .params
                .get(name)
                .ok_or_else(|| Error::Contract(format!("optimizer moment for unknown parameter {name}")))?
                .shape()
                .to_vec();
            all.insert(format!("{p}.adam.m.{name}"), Tensor::new(shape.clone(), m.to_vec())?);
            all.insert(format!("{p}.adam.v.{name}"), Tensor::new(shape, v.to_vec())?);
        }
    }
    Ok(all)
}

/// Serialize a trainer.
pub fn encode(t: &Trainer) -> Result<Vec<u8>> {
    let blob = blob(t);
    let tensors = named_tensors(t)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(blob.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Contract(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, reason: reason.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} remain",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parse a checkpoint, validating magic, version, structure and contents.
pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, reason: "bad magic bytes".into() });
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let blob_len = r.u32("config length")? as usize;
    let blob_at = r.pos;
    let blob = std::str::from_utf8(r.take(blob_len, "config")?)
        .map_err(|e| Error::Format { offset: (blob_at + e.valid_up_to()) as u64, reason: "config is not UTF-8".into() })?;
    let blob_err = |reason: String| Error::Format { offset: blob_at as u64, reason };

    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| r.fail("tensor name is not UTF-8"))?.to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(r.fail(format!("unsupported dtype tag {dtype} for {name}")));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = match numel {
            Some(n) if n > 0 && rank > 0 => n,
            _ => return Err(r.fail(format!("invalid shape {shape:?} for {name}"))),
        };
        let bytes_needed = numel.checked_mul(4).ok_or_else(|| r.fail("payload size overflows"))?;
        let payload = r.take(bytes_needed, &format!("payload of {name}"))?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Format { offset: at as u64, reason: format!("duplicate tensor {name}") });
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let pairs = parse_key_values(blob).map_err(|e| blob_err(e.to_string()))?;
    let mut cfg = TrainConfig::default();
    let mut meta = BTreeMap::new();
    for (k, v) in pairs {
        if k.contains('.') || k == "iteration" {
            meta.insert(k, v);
        } else {
            cfg.set(&k, &v).map_err(|e| blob_err(e.to_string()))?;
        }
    }
    let get = |key: &str| meta.get(key).ok_or_else(|| blob_err(format!("missing {key}")));
    let num = |key: &str| -> Result<u64> { get(key)?.parse().map_err(|_| blob_err(format!("invalid {key}"))) };
    let spec = cfg.model_spec();
    let stored_ok = get("model.image-size")?.parse() == Ok(spec.image_size)
        && parse_channels(get("model.channels")?).ok() == Some(spec.channels)
        && get("model.in-channels")?.parse() == Ok(spec.in_channels)
        && get("model.mask-channel")?.parse() == Ok(spec.include_mask_channel)
        && get("model.batch-norm")?.parse() == Ok(spec.use_batch_norm);
    if !stored_ok {
        return Err(blob_err("model description disagrees with the configuration".into()));
    }
    let iteration = num("iteration")?;
    if num("rng.iteration")? != iteration || num("rng.seed")? != cfg.seed {
        return Err(blob_err("random state disagrees with the configuration".into()));
    }

    let mut build = |role: Role, steps: u64| -> Result<(Network<f32>, AdamState<f32>)> {
        let p = prefix(role);
        let (mut params, mut buffers) = (ParamSet::new(), ParamSet::new());
        let mut moments: BTreeMap<String, (Vec<f32>, Vec<f32>)> = BTreeMap::new();
        let mine = format!("{p}.");
        let names: Vec<String> = tensors.keys().filter(|k| k.starts_with(&mine)).cloned().collect();
        for full in names {
            let t = tensors.remove(&full).unwrap();
            let rest = &full[mine.len()..];
            if let Some(n) = rest.strip_prefix("param.") {
                params.insert(n, t)?;
            } else if let Some(n) = rest.strip_prefix("buffer.") {
                buffers.insert(n, t)?;
            } else if let Some(n) = rest.strip_prefix("adam.m.") {
                moments.entry(n.to_string()).or_default().0 = t.into_data();
            } else if let Some(n) = rest.strip_prefix("adam.v.") {
                moments.entry(n.to_string()).or_default().1 = t.into_data();
            } else {
                return Err(blob_err(format!("unexpected tensor {full}")));
            }
        }
        let net = Network::from_parts(&spec, role, params, buffers)?;
        for (n, (m, v)) in &moments {
            let want = net.params.get(n).map(Tensor::numel);
            if want != Some(m.len()) || want != Some(v.len()) {
                return Err(blob_err(format!("optimizer moments for {n} do not match a parameter")));
            }
        }
        let complete = moments.len() == net.params.len() || (steps == 0 && moments.is_empty());
        if !complete {
            return Err(blob_err(format!("{p}: optimizer moments incomplete")));
        }
        Ok((net, AdamState::restore(cfg.lr, steps, moments)))
    };
    let (generator, opt_g) = build(Role::Generator, num("adam.gen.steps")?)?;
    let (discriminator, opt_d) = build(Role::Discriminator, num("adam.disc.steps")?)?;
    if let Some(stray) = tensors.keys().next() {
        return Err(blob_err(format!("unexpected tensor {stray}")));
    }
    Ok(Trainer { cfg, generator, discriminator, opt_g, opt_d, iteration })
}

pub fn save(t: &Trainer, path: &Path) -> Result<()> {
    let bytes = encode(t)?;
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Trainer> {
    decode(&fs::read(path)?)
}
