use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::SentencePair;
use super::vocab::UNK;

/// Padded minibatch. Row `i` of `source`/`target` is padded with `UNK` up to
/// the longest sequence; the masks are 1 on real tokens and 0 on padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub source: Vec<Vec<usize>>,
    pub source_mask: Vec<Vec<u8>>,
    pub target: Vec<Vec<usize>>,
    pub target_mask: Vec<Vec<u8>>,
}

impl Batch {
    pub fn from_pairs(corpus: &[SentencePair], indices: &[usize]) -> Batch {
        let src_len = indices
            .iter()
            .map(|&i| corpus[i].source.len())
            .max()
            .unwrap_or(0);
        let tgt_len = indices
            .iter()
            .map(|&i| corpus[i].target.len())
            .max()
            .unwrap_or(0);
        let pad = |seq: &[usize], len: usize| {
            let mut ids = seq.to_vec();
            ids.resize(len, UNK);
            let mut mask = vec![1u8; seq.len()];
            mask.resize(len, 0);
            (ids, mask)
        };
        let mut b = Batch {
            indices: indices.to_vec(),
            source: Vec::new(),
            source_mask: Vec::new(),
            target: Vec::new(),
            target_mask: Vec::new(),
        };
        for &i in indices {
            let (s, sm) = pad(&corpus[i].source, src_len);
            let (t, tm) = pad(&corpus[i].target, tgt_len);
            b.source.push(s);
            b.source_mask.push(sm);
            b.target.push(t);
            b.target_mask.push(tm);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Row `i` with padding removed.
    pub fn unpadded(&self, i: usize) -> SentencePair {
        let keep = |ids: &[usize], mask: &[u8]| {
            ids.iter()
                .zip(mask)
                .filter(|(_, &m)| m == 1)
                .map(|(&t, _)| t)
                .collect::<Vec<_>>()
        };
        SentencePair {
            source: keep(&self.source[i], &self.source_mask[i]),
            target: keep(&self.target[i], &self.target_mask[i]),
        }
    }
}

/// Epoch-wise shuffled minibatch indices.
///
/// The order within epoch `e` depends only on `(seed, e)`, so the iterator can
/// be positioned at any update count without replaying earlier epochs.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    pos: usize,
    order: Vec<usize>,
}

impl BatchIterator {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        assert!(n > 0 && batch_size > 0, "empty corpus or zero batch size");
        let mut it = BatchIterator {
            n,
            batch_size,
            seed,
            epoch: 0,
            pos: 0,
            order: Vec::new(),
        };
        it.order = it.epoch_order(0);
        it
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Positions the iterator as if `updates` batches had been drawn.
    pub fn seek(&mut self, updates: usize) {
        let per = self.batches_per_epoch();
        self.epoch = updates / per;
        self.pos = (updates % per) * self.batch_size;
        self.order = self.epoch_order(self.epoch);
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.epoch += 1;
            self.pos = 0;
            self.order = self.epoch_order(self.epoch);
        }
        let end = (self.pos + self.batch_size).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    pub fn next_batch(&mut self, corpus: &[SentencePair]) -> Batch {
        let idx = self.next_indices();
        Batch::from_pairs(corpus, &idx)
    }
}
