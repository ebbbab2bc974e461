//! Trains the attention model on the synthetic copy corpus and reports test BLEU.

use std::time::Instant;

use fusion_nmt::data::toy::{make_toy_corpus, ToyKind, ToySizes};
use fusion_nmt::data::{SentencePair, Tokenizer, Vocabulary};
use fusion_nmt::decoding::{detokenize_all, translate_corpus, BeamConfig, FusionMode, Models};
use fusion_nmt::eval::bleu;
use fusion_nmt::models::{NmtConfig, NmtModel};
use fusion_nmt::training::{train_nmt, DevSet, Hooks, OptimizerKind, TrainConfig};

fn main() -> fusion_nmt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let hidden: usize = args.get(1).map_or(64, |s| s.parse().unwrap());
    let updates: usize = args.get(2).map_or(600, |s| s.parse().unwrap());
    let lr: f64 = args.get(3).map_or(0.005, |s| s.parse().unwrap());
    let corpus = make_toy_corpus(ToyKind::Copy, &ToySizes::default(), 1)?;
    let tok = Tokenizer::default();
    let split = |pairs: &[(String, String)]| -> Vec<(Vec<String>, Vec<String>)> {
        pairs
            .iter()
            .map(|(s, t)| (tok.tokenize(s), tok.tokenize(t)))
            .collect()
    };
    let (train, dev, test) = (
        split(&corpus.train),
        split(&corpus.dev),
        split(&corpus.test),
    );
    let vocab = Vocabulary::build(train.iter().map(|p| p.0.as_slice()), 100)?;
    let encode = |p: &[(Vec<String>, Vec<String>)]| -> Vec<SentencePair> {
        p.iter()
            .map(|(s, t)| SentencePair::encode(&vocab, &vocab, s, t).unwrap())
            .collect()
    };
    let train_ids = encode(&train);
    let dev_set = DevSet::from_pairs(&encode(&dev), &vocab)?;
    let mut cfg = NmtConfig::new(vocab.len(), vocab.len(), 32, hidden);
    cfg.init_std = 0.1;
    let model = NmtModel::<f64>::new(cfg)?;
    let tc = TrainConfig {
        batch_size: 32,
        optimizer: OptimizerKind::adam(lr),
        dropout: 0.0,
        weight_noise: 0.0,
        max_updates: updates,
        eval_interval: 100,
        patience: 100,
        dev_beam: 1,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut log = std::io::stderr();
    let hooks = Hooks {
        log: Some(&mut log),
        ..Hooks::default()
    };
    let out = train_nmt(&model, &train_ids, &dev_set, &tc, hooks)?;
    let elapsed = start.elapsed().as_secs_f64();
    let models = Models::new(&out.model);
    let sources: Vec<Vec<usize>> = test.iter().map(|(s, _)| vocab.encode_sentence(s)).collect();
    let hyps = detokenize_all(
        &translate_corpus(&sources, &models, &BeamConfig::new(4, FusionMode::None)?)?,
        &vocab,
    )?;
    let refs: Vec<Vec<String>> = test.iter().map(|p| p.1.clone()).collect();
    println!("train {elapsed:.1}s, test {}", bleu(&hyps, &refs)?);
    Ok(())
}
