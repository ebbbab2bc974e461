//! Tokenization, vocabularies, corpus filtering, batching and the synthetic
//! corpora used for desk-scale experiments.

mod batch;
mod corpus;
mod tokenize;
pub mod toy;
mod vocab;

pub use batch::{Batch, BatchIterator};
pub use corpus::{
    drop_oov_heavy, filter_pairs, read_lines, Bitext, Corpus, FilterStats, SentencePair, TokenPair,
};
pub use tokenize::Tokenizer;
pub use vocab::{Vocabulary, BOS, BOS_TOKEN, EOS, EOS_TOKEN, UNK, UNK_TOKEN};
