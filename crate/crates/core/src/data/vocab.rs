use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK: usize = 0;
pub const EOS: usize = 1;
pub const BOS: usize = 2;

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "</s>";
pub const BOS_TOKEN: &str = "<s>";

const RESERVED: [&str; 3] = [UNK_TOKEN, EOS_TOKEN, BOS_TOKEN];

/// Token ↔ id map with ids 0, 1, 2 reserved for unknown, end-of-sequence and
/// beginning-of-sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary holding the reserved symbols followed by `tokens` in order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            index: RESERVED
                .iter()
                .enumerate()
                .map(|(i, s)| (s.to_string(), i))
                .collect(),
        };
        for t in tokens {
            let t = t.into();
            if v.index.contains_key(&t) {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// The `cap - 3` most frequent tokens (ties broken lexicographically)
    /// after the reserved symbols.
    pub fn build<'a, I>(sentences: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if cap <= RESERVED.len() {
            return Err(Error::Config(format!(
                "vocabulary cap {cap} leaves no room beyond the reserved ids"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seen_any = false;
        for s in sentences {
            seen_any = true;
            for t in s {
                if RESERVED.contains(&t.as_str()) {
                    continue;
                }
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        if !seen_any || counts.is_empty() {
            return Err(Error::Data(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap - RESERVED.len());
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::Vocab {
            id,
            size: self.len(),
        })
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Ids followed by end-of-sequence.
    pub fn encode_sentence(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = self.encode(tokens);
        ids.push(EOS);
        ids
    }

    /// Surface tokens, stopping at end-of-sequence.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    /// One token per line, reserved symbols on the first three lines, so a
    /// token on line `n` (1-based) has id `n - 1`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..3] != RESERVED {
            return Err(Error::Data(format!(
                "vocabulary file must start with the reserved header {RESERVED:?}"
            )));
        }
        Self::from_tokens(lines[3..].iter().map(|s| s.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// SHA-256 of the serialized vocabulary, used to check that models built
    /// on different vocabularies are never combined.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
