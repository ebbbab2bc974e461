use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Corpus BLEU-4 with clipped n-gram counts and the brevity penalty, as
/// computed by `multi-bleu.perl`.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
    pub score: f64,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<String> = self
            .precisions
            .iter()
            .map(|p| format!("{:.1}", 100.0 * p))
            .collect();
        write!(
            f,
            "BLEU = {:.2}, {} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.score,
            p.join("/"),
            self.brevity_penalty,
            if self.reference_len == 0 {
                0.0
            } else {
                self.candidate_len as f64 / self.reference_len as f64
            },
            self.candidate_len,
            self.reference_len
        )
    }
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(|s| s.as_ref()).collect())
                .or_default() += 1;
        }
    }
    out
}

/// Single-reference corpus BLEU.
pub fn bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<BleuReport> {
    let refs: Vec<Vec<&[S]>> = references.iter().map(|r| vec![r.as_slice()]).collect();
    bleu_multi(candidates, &refs, false)
}

/// Corpus BLEU against one or more references per sentence. The effective
/// reference length of a sentence is that of the reference closest in length
/// to the candidate, the shorter one on ties. With `smoothing`, orders two and
/// above use `(matches + 1) / (total + 1)`.
pub fn bleu_multi<S: AsRef<str>, R: AsRef<[S]>>(
    candidates: &[Vec<S>],
    references: &[Vec<R>],
    smoothing: bool,
) -> Result<BleuReport> {
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Data("sentence without a reference".into()));
        }
        let c = cand.len();
        cand_len += c;
        let mut closest = usize::MAX;
        for r in refs {
            let r = r.as_ref().len();
            let (d, best) = (r.abs_diff(c), closest.abs_diff(c));
            if closest == usize::MAX || d < best || (d == best && r < closest) {
                closest = r;
            }
        }
        ref_len += closest;
        for n in 1..=MAX_ORDER {
            let cand_counts = ngrams(cand, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in refs {
                for (g, k) in ngrams(r.as_ref(), n) {
                    let e = max_ref.entry(g).or_default();
                    *e = (*e).max(k);
                }
            }
            for (g, k) in &cand_counts {
                matches[n - 1] += (*k).min(max_ref.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if smoothing && n > 0 {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if cand_len == 0 {
        0.0
    } else if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.contains(&0.0) || brevity_penalty == 0.0 {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        precisions,
        matches,
        totals,
        brevity_penalty,
        candidate_len: cand_len,
        reference_len: ref_len,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_is_100() {
        let c = vec![toks("a b c d e"), toks("x y z w")];
        assert!((bleu(&c, &c).unwrap().score - 100.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        let r = bleu(&[toks("a b c d")], &[toks("e f g h")]).unwrap();
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn the_cat_sat() {
        let r = bleu(&[toks("the cat sat")], &[toks("the cat sat down")]).unwrap();
        assert_eq!(r.precisions, [1.0, 1.0, 1.0, 0.0]);
        assert_eq!(r.totals, [3, 2, 1, 0]);
        let bp = (1.0f64 - 4.0 / 3.0).exp();
        assert!((r.brevity_penalty - bp).abs() < 1e-12);
        assert_eq!(r.score, 0.0);
        let s = bleu_multi(
            &[toks("the cat sat")],
            &[vec![toks("the cat sat down")]],
            true,
        )
        .unwrap();
        assert!((s.score - 100.0 * bp).abs() < 1e-6);
        assert!((s.score - 71.653131).abs() < 1e-6);
    }

    #[test]
    fn clipping_and_closest_reference() {
        let r = bleu_multi(
            &[toks("the the the the")],
            &[vec![toks("the cat"), toks("a b c d e")]],
            false,
        )
        .unwrap();
        assert_eq!(r.matches[0], 1);
        assert_eq!(r.reference_len, 5);
        let r = bleu_multi(
            &[toks("a b c")],
            &[vec![toks("a b"), toks("a b c d")]],
            false,
        )
        .unwrap();
        assert_eq!(r.reference_len, 2);
    }

    #[test]
    fn one_wrong_token_lowers_score() {
        let refs = vec![toks("a b c d e f"), toks("g h i j k l")];
        let mut cands = refs.clone();
        cands[1][3] = "zz".into();
        assert!(bleu(&cands, &refs).unwrap().score < 100.0);
        assert!(bleu(&[toks("a")], &refs).is_err());
    }

    proptest::proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..1000) {
            use rand::{seq::{IndexedRandom, SliceRandom}, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let words = ["a", "b", "c", "d"];
            let sent = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
                (0..6).map(|_| words.choose(rng).unwrap().to_string()).collect()
            };
            let mut pairs: Vec<(Vec<String>, Vec<String>)> = (0..5).map(|_| (sent(&mut rng), sent(&mut rng))).collect();
            let split = |p: &[(Vec<String>, Vec<String>)]| -> (Vec<Vec<String>>, Vec<Vec<String>>) {
                (p.iter().map(|x| x.0.clone()).collect(), p.iter().map(|x| x.1.clone()).collect())
            };
            let (c, r) = split(&pairs);
            let a = bleu(&c, &r).unwrap().score;
            pairs.shuffle(&mut rng);
            let (c, r) = split(&pairs);
            proptest::prop_assert_eq!(a, bleu(&c, &r).unwrap().score);
        }
    }
}
