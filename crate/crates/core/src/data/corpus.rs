use std::path::Path;

use crate::error::{Error, Result};

use super::vocab::{Vocabulary, EOS};

/// A training pair of id sequences, both terminated by end-of-sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl SentencePair {
    pub fn new(source: Vec<usize>, target: Vec<usize>) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::Data("sentence pair with an empty side".into()));
        }
        if source.last() != Some(&EOS) || target.last() != Some(&EOS) {
            return Err(Error::Data(
                "sentence pair sides must end with end-of-sequence".into(),
            ));
        }
        Ok(SentencePair { source, target })
    }

    pub fn encode(src: &Vocabulary, tgt: &Vocabulary, s: &[String], t: &[String]) -> Result<Self> {
        Self::new(src.encode_sentence(s), tgt.encode_sentence(t))
    }
}

/// Parallel corpus.
pub type Bitext = Vec<SentencePair>;

/// Monolingual corpus of end-of-sequence terminated id sequences.
pub type Corpus = Vec<Vec<usize>>;

/// A tokenized source/target pair.
pub type TokenPair = (Vec<String>, Vec<String>);

/// Counts of pairs removed by [`filter_pairs`], per rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub kept: usize,
    pub too_long: usize,
    pub length_mismatch: usize,
}

/// Drops pairs where either side exceeds `max_len` tokens or where the longer
/// side is more than `ratio_bound` times the shorter. Empty sides are treated
/// as an unbounded mismatch.
pub fn filter_pairs(
    pairs: &[TokenPair],
    max_len: usize,
    ratio_bound: f64,
) -> Result<(Vec<TokenPair>, FilterStats)> {
    let mut stats = FilterStats::default();
    let mut out = Vec::new();
    for (s, t) in pairs {
        if s.len() > max_len || t.len() > max_len {
            stats.too_long += 1;
            continue;
        }
        let (lo, hi) = (s.len().min(t.len()), s.len().max(t.len()));
        if lo == 0 || hi as f64 > ratio_bound * lo as f64 {
            stats.length_mismatch += 1;
            continue;
        }
        out.push((s.clone(), t.clone()));
    }
    stats.kept = out.len();
    if out.is_empty() {
        return Err(Error::Data(format!(
            "every sentence pair was filtered out ({stats:?})"
        )));
    }
    Ok((out, stats))
}

/// Removes sentences with more than 10% of their tokens outside `vocab`.
/// Returns the kept sentences and the number dropped.
pub fn drop_oov_heavy(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
) -> Result<(Vec<Vec<String>>, usize)> {
    let mut kept = Vec::new();
    let mut dropped = 0;
    for s in sentences {
        let oov = s.iter().filter(|t| !vocab.contains(t)).count();
        // strictly more than ten percent
        if s.is_empty() || oov * 10 > s.len() {
            dropped += 1;
        } else {
            kept.push(s.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::Data(
            "no sentence survived out-of-vocabulary filtering".into(),
        ));
    }
    Ok((kept, dropped))
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n_tokens(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn eighty_one_tokens_is_too_long() {
        let pairs = vec![(n_tokens(81), n_tokens(80)), (n_tokens(80), n_tokens(80))];
        let (kept, stats) = filter_pairs(&pairs, 80, 3.0).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(stats.too_long, 1);
    }

    #[test]
    fn ratio_boundary() {
        let pairs = vec![(n_tokens(10), n_tokens(31)), (n_tokens(10), n_tokens(30))];
        let (kept, stats) = filter_pairs(&pairs, 80, 3.0).unwrap();
        assert_eq!(kept, vec![(n_tokens(10), n_tokens(30))]);
        assert_eq!(stats.length_mismatch, 1);
    }

    #[test]
    fn mixed_fixture_matches_hand_application() {
        // (source len, target len) → survives?
        // 5/5 yes; 90/85 too long; 4/13 ratio 3.25 no; 20/60 ratio 3.0 yes;
        // 80/27 ratio 2.96 yes; 0/3 empty side no
        let lens = [(5, 5), (90, 85), (4, 13), (20, 60), (80, 27), (0, 3)];
        let pairs: Vec<_> = lens
            .iter()
            .map(|&(a, b)| (n_tokens(a), n_tokens(b)))
            .collect();
        let (kept, stats) = filter_pairs(&pairs, 80, 3.0).unwrap();
        let got: Vec<(usize, usize)> = kept.iter().map(|(s, t)| (s.len(), t.len())).collect();
        assert_eq!(got, vec![(5, 5), (20, 60), (80, 27)]);
        assert_eq!(
            stats,
            FilterStats {
                kept: 3,
                too_long: 1,
                length_mismatch: 2
            }
        );
    }

    #[test]
    fn filtering_everything_is_an_error() {
        let pairs = vec![(n_tokens(100), n_tokens(1))];
        assert!(matches!(filter_pairs(&pairs, 80, 3.0), Err(Error::Data(_))));
    }

    #[test]
    fn oov_threshold_is_strict() {
        let vocab = Vocabulary::from_tokens(n_tokens(10)).unwrap();
        let mut one_oov = n_tokens(10);
        one_oov[3] = "zz".into();
        let mut two_oov = one_oov.clone();
        two_oov[7] = "yy".into();
        let (kept, dropped) = drop_oov_heavy(&[one_oov.clone(), two_oov], &vocab).unwrap();
        assert_eq!(kept, vec![one_oov]);
        assert_eq!(dropped, 1);
        assert!(drop_oov_heavy(&[vec!["q".to_string()]], &vocab).is_err());
    }

    proptest::proptest! {
        #[test]
        fn filtering_is_idempotent(lens in proptest::collection::vec((0usize..100, 0usize..100), 1..40)) {
            let pairs: Vec<_> = lens.iter().map(|&(a, b)| (n_tokens(a), n_tokens(b))).collect();
            if let Ok((once, _)) = filter_pairs(&pairs, 80, 3.0) {
                let (twice, stats) = filter_pairs(&once, 80, 3.0).unwrap();
                proptest::prop_assert_eq!(&twice, &once);
                proptest::prop_assert_eq!(stats.too_long + stats.length_mismatch, 0);
            }
        }
    }
}
