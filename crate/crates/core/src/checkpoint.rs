//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `FNMTCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the UTF-8 header, the block
//! payloads as little-endian `f64` in header order, and finally the SHA-256
//! of every preceding byte.
//!
//! The header is line oriented: `kind=<kind>`, then the metadata as sorted
//! `key=value` lines, then one `block <name> <d0>x<d1>...` line per block.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{FusedModel, LmConfig, NmtConfig, NmtModel, RnnLm};
use crate::params::ParameterSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{EarlyStopState, Optimizer, OptimizerKind, ResumeState};

pub const MAGIC: &[u8; 8] = b"FNMTCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub blocks: Vec<Block>,
}

fn check_token(what: &str, s: &str, extra: &[char]) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || extra.contains(&c)) {
        return Err(Error::Format(format!("invalid {what} {s:?}")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            meta: BTreeMap::new(),
            blocks: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing header key {key}")))
    }

    pub fn parse<F: FromStr>(&self, key: &str) -> Result<F> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("header key {key} has unparsable value {v:?}")))
    }

    fn parse_opt<F: FromStr>(&self, key: &str) -> Result<Option<F>> {
        if self.meta.contains_key(key) {
            self.parse(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected checkpoint kind {kind}, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: String, t: &Tensor<T>) {
        self.blocks.push(Block {
            name,
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.as_f64()).collect(),
        });
    }

    /// Appends every parameter of `ps` in id order, named `prefix + id`.
    pub fn push_params<T: Scalar>(&mut self, prefix: &str, ps: &ParameterSet<T>) {
        for p in ps.iter() {
            self.push_tensor(format!("{prefix}{}", p.id), &p.value);
        }
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Option<Tensor<T>> {
        self.block(name)
            .map(|b| Tensor::from_f64(&b.shape, &b.data).expect("block shape checked on load"))
    }

    /// Overwrites every parameter of `ps` from the block `prefix + id`.
    pub fn fill_params<T: Scalar>(&self, prefix: &str, ps: &mut ParameterSet<T>) -> Result<()> {
        for p in ps.iter_mut() {
            let name = format!("{prefix}{}", p.id);
            let b = self
                .block(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter block {name}")))?;
            if b.shape != p.value.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    b.shape,
                    p.value.shape()
                )));
            }
            p.value = Tensor::from_f64(&b.shape, &b.data)?;
        }
        Ok(())
    }

    fn header(&self) -> Result<String> {
        check_token("kind", &self.kind, &['='])?;
        let mut h = format!("kind={}\n", self.kind);
        for (k, v) in &self.meta {
            check_token("header key", k, &['='])?;
            if k == "kind" || k == "block" || v.contains('\n') {
                return Err(Error::Format(format!("invalid header entry {k}")));
            }
            h.push_str(&format!("{k}={v}\n"));
        }
        for b in &self.blocks {
            check_token("block name", &b.name, &[])?;
            let dims: Vec<String> = b.shape.iter().map(usize::to_string).collect();
            if dims.is_empty() || b.shape.iter().product::<usize>() != b.data.len() {
                return Err(Error::Format(format!(
                    "block {} has inconsistent shape",
                    b.name
                )));
            }
            h.push_str(&format!("block {} {}\n", b.name, dims.join("x")));
        }
        Ok(h)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = self.header()?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for b in &self.blocks {
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fixed = MAGIC.len() + 4 + 8;
        if bytes.len() < fixed + 32 {
            return Err(Error::Format("file too short".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header = body
            .get(fixed..fixed.saturating_add(hlen))
            .ok_or_else(|| Error::Format("header runs past the end".into()))?;
        let header =
            std::str::from_utf8(header).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let mut payload = &body[fixed + hlen..];
        let mut lines = header.lines();
        let kind = lines
            .next()
            .and_then(|l| l.strip_prefix("kind="))
            .ok_or_else(|| Error::Format("header must start with kind=".into()))?;
        let mut ck = Checkpoint::new(kind);
        for line in lines {
            if let Some(rest) = line.strip_prefix("block ") {
                let (name, dims) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::Format(format!("bad block line {line:?}")))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Format(format!("bad block line {line:?}")))?;
                let n: usize = shape.iter().product();
                if payload.len() < 8 * n {
                    return Err(Error::Format(format!("block {name} runs past the end")));
                }
                let (raw, rest) = payload.split_at(8 * n);
                payload = rest;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                ck.blocks.push(Block {
                    name: name.to_string(),
                    shape,
                    data,
                });
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
                ck.meta.insert(k.to_string(), v.to_string());
            }
        }
        if !payload.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing payload bytes",
                payload.len()
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn put_nmt_config(ck: &mut Checkpoint, c: &NmtConfig) {
    ck.set("nmt.src_vocab", c.src_vocab);
    ck.set("nmt.tgt_vocab", c.tgt_vocab);
    ck.set("nmt.embed", c.embed);
    ck.set("nmt.hidden", c.hidden);
    ck.set("nmt.deep_output_width", c.deep_output_width);
    ck.set("nmt.init_std", c.init_std);
    ck.set("nmt.seed", c.seed);
    if let Some(d) = &c.tgt_vocab_digest {
        ck.set("nmt.tgt_vocab_digest", d);
    }
}

fn get_nmt_config(ck: &Checkpoint) -> Result<NmtConfig> {
    Ok(NmtConfig {
        src_vocab: ck.parse("nmt.src_vocab")?,
        tgt_vocab: ck.parse("nmt.tgt_vocab")?,
        embed: ck.parse("nmt.embed")?,
        hidden: ck.parse("nmt.hidden")?,
        deep_output_width: ck.parse("nmt.deep_output_width")?,
        init_std: ck.parse("nmt.init_std")?,
        seed: ck.parse("nmt.seed")?,
        tgt_vocab_digest: ck.parse_opt("nmt.tgt_vocab_digest")?,
    })
}

fn put_lm_config(ck: &mut Checkpoint, c: &LmConfig) {
    ck.set("lm.vocab", c.vocab);
    ck.set("lm.embed", c.embed);
    ck.set("lm.hidden", c.hidden);
    ck.set("lm.init_std", c.init_std);
    ck.set("lm.seed", c.seed);
    if let Some(d) = &c.vocab_digest {
        ck.set("lm.vocab_digest", d);
    }
}

fn get_lm_config(ck: &Checkpoint) -> Result<LmConfig> {
    Ok(LmConfig {
        vocab: ck.parse("lm.vocab")?,
        embed: ck.parse("lm.embed")?,
        hidden: ck.parse("lm.hidden")?,
        init_std: ck.parse("lm.init_std")?,
        seed: ck.parse("lm.seed")?,
        vocab_digest: ck.parse_opt("lm.vocab_digest")?,
    })
}

pub fn nmt_checkpoint<T: Scalar>(m: &NmtModel<T>) -> Checkpoint {
    let mut ck = Checkpoint::new("nmt");
    put_nmt_config(&mut ck, &m.config);
    ck.push_params("", &m.params);
    ck
}

pub fn nmt_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<NmtModel<T>> {
    ck.expect_kind("nmt")?;
    let mut m = NmtModel::new(get_nmt_config(ck)?)?;
    ck.fill_params("", &mut m.params)?;
    Ok(m)
}

pub fn lm_checkpoint<T: Scalar>(m: &RnnLm<T>) -> Checkpoint {
    let mut ck = Checkpoint::new("lm");
    put_lm_config(&mut ck, &m.config);
    ck.push_params("", &m.params);
    ck
}

pub fn lm_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<RnnLm<T>> {
    ck.expect_kind("lm")?;
    let mut m = RnnLm::new(get_lm_config(ck)?)?;
    ck.fill_params("", &mut m.params)?;
    Ok(m)
}

/// Holds both component models and the fused layer.
pub fn fused_checkpoint<T: Scalar>(m: &FusedModel<T>) -> Checkpoint {
    let mut ck = Checkpoint::new("fused");
    put_nmt_config(&mut ck, &m.nmt.config);
    put_lm_config(&mut ck, &m.lm.config);
    ck.push_params("", &m.nmt.params);
    ck.push_params("", &m.lm.params);
    ck.push_params("", &m.params);
    ck
}

pub fn fused_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<FusedModel<T>> {
    ck.expect_kind("fused")?;
    let mut nmt = NmtModel::new(get_nmt_config(ck)?)?;
    ck.fill_params("", &mut nmt.params)?;
    let mut lm = RnnLm::new(get_lm_config(ck)?)?;
    ck.fill_params("", &mut lm.params)?;
    let mut fm = FusedModel::assemble(nmt, lm)?;
    ck.fill_params("", &mut fm.params)?;
    Ok(fm)
}

fn put_optimizer(ck: &mut Checkpoint, kind: &OptimizerKind) {
    ck.set("optimizer", kind.name());
    match *kind {
        OptimizerKind::Adadelta { rho, eps } => {
            ck.set("optimizer.rho", rho);
            ck.set("optimizer.eps", eps);
        }
        OptimizerKind::RmsProp { lr, decay, eps } => {
            ck.set("optimizer.lr", lr);
            ck.set("optimizer.decay", decay);
            ck.set("optimizer.eps", eps);
        }
        OptimizerKind::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            ck.set("optimizer.lr", lr);
            ck.set("optimizer.beta1", beta1);
            ck.set("optimizer.beta2", beta2);
            ck.set("optimizer.eps", eps);
        }
    }
}

fn get_optimizer(ck: &Checkpoint) -> Result<OptimizerKind> {
    Ok(match ck.get("optimizer")? {
        "adadelta" => OptimizerKind::Adadelta {
            rho: ck.parse("optimizer.rho")?,
            eps: ck.parse("optimizer.eps")?,
        },
        "rmsprop" => OptimizerKind::RmsProp {
            lr: ck.parse("optimizer.lr")?,
            decay: ck.parse("optimizer.decay")?,
            eps: ck.parse("optimizer.eps")?,
        },
        "adam" => OptimizerKind::Adam {
            lr: ck.parse("optimizer.lr")?,
            beta1: ck.parse("optimizer.beta1")?,
            beta2: ck.parse("optimizer.beta2")?,
            eps: ck.parse("optimizer.eps")?,
        },
        other => return Err(Error::Format(format!("unknown optimizer {other}"))),
    })
}

/// Adds the training state: current values as `cur.<id>`, optimizer
/// accumulators as `opt.<id>.<slot>` and the counters in the header.
pub fn push_resume<T: Scalar>(ck: &mut Checkpoint, state: &ResumeState<T>) {
    ck.set("resume.update", state.update);
    ck.set("resume.steps", state.optimizer.steps);
    ck.set("resume.update_scale", state.optimizer.update_scale);
    put_optimizer(ck, &state.optimizer.kind);
    let e = &state.early;
    ck.set("early.higher_is_better", e.higher_is_better);
    ck.set("early.patience", e.patience);
    if let Some(b) = e.best {
        ck.set("early.best", b);
    }
    ck.set("early.best_update", e.best_update);
    ck.set("early.since_best", e.since_best);
    ck.push_params("cur.", &state.params);
    for (name, t) in state.optimizer.blocks(&state.params) {
        ck.push_tensor(name, &t);
    }
}

/// Training state stored by [`push_resume`], if any. `trained` is the set
/// being optimized, holding the best values.
pub fn resume_state<T: Scalar>(
    ck: &Checkpoint,
    trained: &ParameterSet<T>,
) -> Result<Option<ResumeState<T>>> {
    if !ck.meta.contains_key("resume.update") {
        return Ok(None);
    }
    let mut params = trained.clone();
    ck.fill_params("cur.", &mut params)?;
    let mut optimizer = Optimizer::new(get_optimizer(ck)?, &params)
        .with_update_scale(ck.parse("resume.update_scale")?);
    optimizer.steps = ck.parse("resume.steps")?;
    optimizer.restore(&params, |n| ck.tensor(n))?;
    let early = EarlyStopState {
        higher_is_better: ck.parse("early.higher_is_better")?,
        patience: ck.parse("early.patience")?,
        best: ck.parse_opt("early.best")?,
        best_update: ck.parse("early.best_update")?,
        since_best: ck.parse("early.since_best")?,
    };
    Ok(Some(ResumeState {
        update: ck.parse("resume.update")?,
        params,
        best: trained.clone(),
        optimizer,
        early,
    }))
}
