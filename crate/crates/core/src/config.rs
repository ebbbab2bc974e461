//! Experiment files: `[section]` headers followed by `key = value` lines.
//! `#` starts a comment line. Every key is optional; unknown sections and
//! keys are rejected with their full `section.key` path.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{LmConfig, NmtConfig};
use crate::training::{FinetuneConfig, OptimizerKind, TrainConfig};

pub const SEED_ENV: &str = "FUSION_NMT_SEED";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataPaths {
    pub src_train: Option<PathBuf>,
    pub tgt_train: Option<PathBuf>,
    pub src_dev: Option<PathBuf>,
    pub tgt_dev: Option<PathBuf>,
    pub mono_train: Option<PathBuf>,
    pub mono_dev: Option<PathBuf>,
    pub src_vocab: Option<PathBuf>,
    pub tgt_vocab: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub paths: DataPaths,
    pub vocab_cap: usize,
    pub max_len: usize,
    pub length_ratio: f64,
    pub lowercase: bool,
    pub char_mode: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            paths: DataPaths::default(),
            vocab_cap: 30_000,
            max_len: 50,
            length_ratio: 3.0,
            lowercase: true,
            char_mode: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSizes {
    pub embed: usize,
    pub hidden: usize,
    pub deep_output_width: Option<usize>,
    pub init_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam: usize,
    pub beta: f64,
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam: 12,
            beta: 0.01,
            length_norm: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSizes,
    pub lm: ModelSizes,
    pub train: TrainConfig,
    pub lm_train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1234,
            data: DataConfig::default(),
            model: ModelSizes {
                embed: 620,
                hidden: 1000,
                deep_output_width: None,
                init_std: 0.01,
            },
            lm: ModelSizes {
                embed: 620,
                hidden: 2000,
                deep_output_width: None,
                init_std: 0.01,
            },
            train: TrainConfig::default(),
            lm_train: TrainConfig {
                dropout: 0.0,
                weight_noise: 0.0,
                ..TrainConfig::default()
            },
            finetune: FinetuneConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

/// Parsed file; values are removed as they are read so leftovers are unknown.
struct Entries {
    map: BTreeMap<String, Entry>,
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    const EXPECT: &'static str;
}

macro_rules! from_str_value {
    ($t:ty, $e:literal) => {
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                <$t>::from_str(s).ok()
            }
            const EXPECT: &'static str = $e;
        }
    };
}

from_str_value!(usize, "a non-negative integer");
from_str_value!(u64, "a non-negative integer");
from_str_value!(f64, "a number");
from_str_value!(String, "a string");

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "true" | "yes" | "1" => Some(true),
            "false" | "no" | "0" => Some(false),
            _ => None,
        }
    }
    const EXPECT: &'static str = "true or false";
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Option<Self> {
        Some(PathBuf::from(s))
    }
    const EXPECT: &'static str = "a path";
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {n}: unterminated section header")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!("line {n}: unknown section {name}")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {n}: expected key = value")))?;
            let sec = section.as_deref().ok_or_else(|| {
                Error::Config(format!("line {n}: key {} outside any section", k.trim()))
            })?;
            let path = format!("{sec}.{}", k.trim());
            let entry = Entry {
                value: v.trim().to_string(),
                line: n,
            };
            if let Some(prev) = map.insert(path.clone(), entry) {
                return Err(Error::Config(format!(
                    "line {n}: {path} already set on line {}",
                    prev.line
                )));
            }
        }
        Ok(Entries { map })
    }

    fn take<V: ConfigValue>(&mut self, path: &str, slot: &mut V) -> Result<()> {
        if let Some(e) = self.map.remove(path) {
            *slot = V::parse_value(&e.value).ok_or_else(|| {
                Error::Config(format!(
                    "line {}: {path} must be {}, got {:?}",
                    e.line,
                    V::EXPECT,
                    e.value
                ))
            })?;
        }
        Ok(())
    }

    fn take_opt<V: ConfigValue>(&mut self, path: &str, slot: &mut Option<V>) -> Result<()> {
        if self.map.contains_key(path) {
            let mut v = None;
            if let Some(e) = self.map.remove(path) {
                v = Some(V::parse_value(&e.value).ok_or_else(|| {
                    Error::Config(format!(
                        "line {}: {path} must be {}, got {:?}",
                        e.line,
                        V::EXPECT,
                        e.value
                    ))
                })?);
            }
            *slot = v;
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some((k, e)) = self.map.into_iter().next() {
            return Err(Error::Config(format!("line {}: unknown key {k}", e.line)));
        }
        Ok(())
    }
}

const SECTIONS: [&str; 8] = [
    "run", "data", "model", "lm", "train", "lm_train", "finetune", "decode",
];

fn take_sizes(e: &mut Entries, sec: &str, m: &mut ModelSizes) -> Result<()> {
    e.take(&format!("{sec}.embed"), &mut m.embed)?;
    e.take(&format!("{sec}.hidden"), &mut m.hidden)?;
    e.take(&format!("{sec}.init_std"), &mut m.init_std)?;
    if sec == "model" {
        e.take_opt("model.deep_output_width", &mut m.deep_output_width)?;
    }
    Ok(())
}

fn take_optimizer(e: &mut Entries, sec: &str, kind: &mut OptimizerKind) -> Result<()> {
    let mut name = kind.name().to_string();
    let path = format!("{sec}.optimizer");
    let line = e.map.get(&path).map(|x| x.line);
    e.take(&path, &mut name)?;
    if name != kind.name() {
        *kind = match name.as_str() {
            "adadelta" => OptimizerKind::adadelta(),
            "rmsprop" => OptimizerKind::rmsprop(0.001),
            "adam" => OptimizerKind::adam(0.001),
            _ => {
                return Err(Error::Config(format!(
                    "line {}: {path} must be adadelta, rmsprop or adam, got {name:?}",
                    line.unwrap_or(0)
                )))
            }
        };
    }
    let mut take = |key: &str, v: &mut f64| e.take(&format!("{sec}.{key}"), v);
    match kind {
        OptimizerKind::Adadelta { rho, eps } => {
            take("rho", rho)?;
            take("eps", eps)?;
        }
        OptimizerKind::RmsProp { lr, decay, eps } => {
            take("lr", lr)?;
            take("decay", decay)?;
            take("eps", eps)?;
        }
        OptimizerKind::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            take("lr", lr)?;
            take("beta1", beta1)?;
            take("beta2", beta2)?;
            take("eps", eps)?;
        }
    }
    Ok(())
}

fn take_train(e: &mut Entries, sec: &str, t: &mut TrainConfig) -> Result<()> {
    let p = |k: &str| format!("{sec}.{k}");
    e.take(&p("batch_size"), &mut t.batch_size)?;
    e.take(&p("clip"), &mut t.clip)?;
    take_optimizer(e, sec, &mut t.optimizer)?;
    e.take(&p("update_scale"), &mut t.update_scale)?;
    e.take(&p("dropout"), &mut t.dropout)?;
    e.take(&p("weight_noise"), &mut t.weight_noise)?;
    e.take(&p("max_updates"), &mut t.max_updates)?;
    e.take(&p("eval_interval"), &mut t.eval_interval)?;
    e.take(&p("patience"), &mut t.patience)?;
    e.take(&p("dev_beam"), &mut t.dev_beam)?;
    Ok(())
}

fn render_optimizer(out: &mut String, kind: &OptimizerKind) {
    let _ = writeln!(out, "optimizer = {}", kind.name());
    match *kind {
        OptimizerKind::Adadelta { rho, eps } => {
            let _ = writeln!(out, "rho = {rho}\neps = {eps}");
        }
        OptimizerKind::RmsProp { lr, decay, eps } => {
            let _ = writeln!(out, "lr = {lr}\ndecay = {decay}\neps = {eps}");
        }
        OptimizerKind::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            let _ = writeln!(
                out,
                "lr = {lr}\nbeta1 = {beta1}\nbeta2 = {beta2}\neps = {eps}"
            );
        }
    }
}

fn render_train(out: &mut String, t: &TrainConfig) {
    let _ = writeln!(out, "batch_size = {}\nclip = {}", t.batch_size, t.clip);
    render_optimizer(out, &t.optimizer);
    let _ = writeln!(
        out,
        "update_scale = {}\ndropout = {}\nweight_noise = {}\nmax_updates = {}\neval_interval = {}\npatience = {}\ndev_beam = {}",
        t.update_scale, t.dropout, t.weight_noise, t.max_updates, t.eval_interval, t.patience, t.dev_beam
    );
}

impl RunConfig {
    /// Parses `text` over the defaults. The seed is then replaced by
    /// `FUSION_NMT_SEED` when that variable is set.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::parse_without_env(text)?;
        if let Ok(s) = std::env::var(SEED_ENV) {
            c.seed = s.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "{SEED_ENV} must be a non-negative integer, got {s:?}"
                ))
            })?;
        }
        c.apply_seed();
        c.validate()?;
        Ok(c)
    }

    pub fn parse_without_env(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut e = Entries::parse(text)?;
        e.take("run.seed", &mut c.seed)?;

        let d = &mut c.data;
        for (key, slot) in [
            ("src_train", &mut d.paths.src_train),
            ("tgt_train", &mut d.paths.tgt_train),
            ("src_dev", &mut d.paths.src_dev),
            ("tgt_dev", &mut d.paths.tgt_dev),
            ("mono_train", &mut d.paths.mono_train),
            ("mono_dev", &mut d.paths.mono_dev),
            ("src_vocab", &mut d.paths.src_vocab),
            ("tgt_vocab", &mut d.paths.tgt_vocab),
        ] {
            e.take_opt(&format!("data.{key}"), slot)?;
        }
        e.take("data.vocab_cap", &mut d.vocab_cap)?;
        e.take("data.max_len", &mut d.max_len)?;
        e.take("data.length_ratio", &mut d.length_ratio)?;
        e.take("data.lowercase", &mut d.lowercase)?;
        e.take("data.char_mode", &mut d.char_mode)?;

        take_sizes(&mut e, "model", &mut c.model)?;
        take_sizes(&mut e, "lm", &mut c.lm)?;
        take_train(&mut e, "train", &mut c.train)?;
        take_train(&mut e, "lm_train", &mut c.lm_train)?;
        take_train(&mut e, "finetune", &mut c.finetune.train)?;
        e.take("finetune.reduce_after", &mut c.finetune.reduce_after)?;
        e.take("finetune.reduce_factor", &mut c.finetune.reduce_factor)?;
        e.take("decode.beam", &mut c.decode.beam)?;
        e.take("decode.beta", &mut c.decode.beta)?;
        e.take("decode.length_norm", &mut c.decode.length_norm)?;
        e.finish()?;
        c.apply_seed();
        Ok(c)
    }

    fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        self.lm_train.seed = self.seed;
        self.finetune.train.seed = self.seed;
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        self.lm_train
            .validate()
            .map_err(|e| Error::Config(format!("lm_train: {e}")))?;
        self.finetune
            .validate()
            .map_err(|e| Error::Config(format!("finetune: {e}")))?;
        if self.decode.beam == 0 {
            return Err(Error::Config("decode.beam must be at least 1".into()));
        }
        if self.decode.beta.is_nan() || self.decode.beta < 0.0 {
            return Err(Error::Config("decode.beta must be >= 0".into()));
        }
        if self.data.vocab_cap <= 3 {
            return Err(Error::Config(
                "data.vocab_cap must exceed the 3 reserved ids".into(),
            ));
        }
        Ok(())
    }

    pub fn nmt_config(&self, src_vocab: usize, tgt_vocab: usize) -> NmtConfig {
        let mut c = NmtConfig::new(src_vocab, tgt_vocab, self.model.embed, self.model.hidden);
        if let Some(w) = self.model.deep_output_width {
            c.deep_output_width = w;
        }
        c.init_std = self.model.init_std;
        c.seed = self.seed;
        c
    }

    pub fn lm_config(&self, vocab: usize) -> LmConfig {
        let mut c = LmConfig::new(vocab, self.lm.embed, self.lm.hidden);
        c.init_std = self.lm.init_std;
        c.seed = self.seed;
        c
    }

    /// The configuration as a file that parses back to `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[run]\nseed = {}\n", self.seed);
        out.push_str("[data]\n");
        let p = &self.data.paths;
        for (key, v) in [
            ("src_train", &p.src_train),
            ("tgt_train", &p.tgt_train),
            ("src_dev", &p.src_dev),
            ("tgt_dev", &p.tgt_dev),
            ("mono_train", &p.mono_train),
            ("mono_dev", &p.mono_dev),
            ("src_vocab", &p.src_vocab),
            ("tgt_vocab", &p.tgt_vocab),
        ] {
            if let Some(v) = v {
                let _ = writeln!(out, "{key} = {}", v.display());
            }
        }
        let d = &self.data;
        let _ = writeln!(
            out,
            "vocab_cap = {}\nmax_len = {}\nlength_ratio = {}\nlowercase = {}\nchar_mode = {}\n",
            d.vocab_cap, d.max_len, d.length_ratio, d.lowercase, d.char_mode
        );
        for (sec, m) in [("model", &self.model), ("lm", &self.lm)] {
            let _ = writeln!(
                out,
                "[{sec}]\nembed = {}\nhidden = {}\ninit_std = {}",
                m.embed, m.hidden, m.init_std
            );
            if let Some(w) = m.deep_output_width {
                let _ = writeln!(out, "deep_output_width = {w}");
            }
            out.push('\n');
        }
        for (sec, t) in [
            ("train", &self.train),
            ("lm_train", &self.lm_train),
            ("finetune", &self.finetune.train),
        ] {
            let _ = writeln!(out, "[{sec}]");
            render_train(&mut out, t);
            if sec == "finetune" {
                let _ = writeln!(
                    out,
                    "reduce_after = {}\nreduce_factor = {}",
                    self.finetune.reduce_after, self.finetune.reduce_factor
                );
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "[decode]\nbeam = {}\nbeta = {}\nlength_norm = {}",
            self.decode.beam, self.decode.beta, self.decode.length_norm
        );
        out
    }
}
