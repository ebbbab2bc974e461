//! Deterministic synthetic corpora.
//!
//! * `Copy` / `Reverse`: the target is the source, or the source reversed.
//! * `ConstrainedTarget`: the source is a sequence of nouns `x<k>`; the target
//!   translates each noun to `y<k>` and puts an article in front of it. The
//!   first article is `det`; every later article is `a<c>`, where `c` is the
//!   class of the *preceding* noun. Classes are a hidden random table.
//!   Bitext nouns follow a Zipf law, so rare nouns' classes are barely
//!   observed in the parallel data, while the large monolingual corpus (and
//!   dev/test) use nouns uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyKind {
    Copy,
    Reverse,
    ConstrainedTarget,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(ToyKind::Copy),
            "reverse" => Ok(ToyKind::Reverse),
            "constrained-target" | "constrained" => Ok(ToyKind::ConstrainedTarget),
            _ => Err(Error::Config(format!("unknown toy corpus kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub mono: usize,
    pub mono_dev: usize,
    /// Distinct content words (nouns for the constrained task).
    pub words: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Noun classes (constrained task only).
    pub classes: usize,
    /// Zipf exponent of the bitext noun distribution; 0 is uniform.
    pub zipf: f64,
}

impl Default for ToySizes {
    fn default() -> Self {
        ToySizes {
            train: 2000,
            dev: 100,
            test: 100,
            mono: 0,
            mono_dev: 0,
            words: 9,
            min_len: 4,
            max_len: 9,
            classes: 3,
            zipf: 0.0,
        }
    }
}

/// Hidden rule of the constrained-target language.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NounClasses {
    pub classes: Vec<usize>,
}

impl NounClasses {
    pub fn article_after(&self, noun: Option<usize>) -> String {
        match noun {
            None => "det".to_string(),
            Some(k) => format!("a{}", self.classes[k]),
        }
    }

    /// Target rendering of a noun sequence.
    pub fn render(&self, nouns: &[usize]) -> Vec<String> {
        let mut out = Vec::with_capacity(2 * nouns.len());
        let mut prev = None;
        for &k in nouns {
            out.push(self.article_after(prev));
            out.push(format!("y{k}"));
            prev = Some(k);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpus {
    pub train: Vec<(String, String)>,
    pub dev: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
    /// Target-language sentences for language-model training.
    pub mono: Vec<String>,
    pub mono_dev: Vec<String>,
    pub grammar: Option<NounClasses>,
}

struct Sampler {
    cdf: Vec<f64>,
}

impl Sampler {
    fn new(n: usize, zipf: f64, rng: &mut ChaCha8Rng) -> Self {
        // random rank assignment so rarity is unrelated to the word index
        let mut ranks: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            ranks.swap(i, j);
        }
        let w: Vec<f64> = (0..n)
            .map(|k| 1.0 / ((ranks[k] + 1) as f64).powf(zipf))
            .collect();
        let z: f64 = w.iter().sum();
        let mut acc = 0.0;
        let cdf = w
            .iter()
            .map(|v| {
                acc += v / z;
                acc
            })
            .collect();
        Sampler { cdf }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1)
    }
}

pub fn make_toy_corpus(kind: ToyKind, sizes: &ToySizes, seed: u64) -> Result<ToyCorpus> {
    if sizes.words == 0 || sizes.min_len == 0 || sizes.min_len > sizes.max_len {
        return Err(Error::Config(format!("invalid toy corpus sizes {sizes:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grammar = match kind {
        ToyKind::ConstrainedTarget => {
            if sizes.classes < 2 {
                return Err(Error::Config(
                    "constrained task needs at least 2 noun classes".into(),
                ));
            }
            Some(NounClasses {
                classes: (0..sizes.words)
                    .map(|_| rng.random_range(0..sizes.classes))
                    .collect(),
            })
        }
        _ => None,
    };
    let skewed = Sampler::new(sizes.words, sizes.zipf, &mut rng);
    let uniform = Sampler::new(sizes.words, 0.0, &mut rng);

    let sentence = |sampler: &Sampler, rng: &mut ChaCha8Rng| -> (String, String) {
        let len = rng.random_range(sizes.min_len..=sizes.max_len);
        let words: Vec<usize> = (0..len).map(|_| sampler.draw(rng)).collect();
        match (&grammar, kind) {
            (Some(g), _) => {
                let src: Vec<String> = words.iter().map(|k| format!("x{k}")).collect();
                (src.join(" "), g.render(&words).join(" "))
            }
            (None, ToyKind::Reverse) => {
                let src: Vec<String> = words.iter().map(|k| format!("w{k}")).collect();
                let mut tgt = src.clone();
                tgt.reverse();
                (src.join(" "), tgt.join(" "))
            }
            (None, _) => {
                let src: Vec<String> = words.iter().map(|k| format!("w{k}")).collect();
                (src.join(" "), src.join(" "))
            }
        }
    };

    let train = (0..sizes.train)
        .map(|_| sentence(&skewed, &mut rng))
        .collect();
    let dev = (0..sizes.dev)
        .map(|_| sentence(&uniform, &mut rng))
        .collect();
    let test = (0..sizes.test)
        .map(|_| sentence(&uniform, &mut rng))
        .collect();
    let mono = (0..sizes.mono)
        .map(|_| sentence(&uniform, &mut rng).1)
        .collect();
    let mono_dev = (0..sizes.mono_dev)
        .map(|_| sentence(&uniform, &mut rng).1)
        .collect();
    Ok(ToyCorpus {
        train,
        dev,
        test,
        mono,
        mono_dev,
        grammar,
    })
}
