//! Baseline versus deep fusion on the constrained-target corpus.

use std::time::Instant;

use fusion_nmt::data::toy::{make_toy_corpus, NounClasses, ToyKind, ToySizes};
use fusion_nmt::data::{SentencePair, Tokenizer, Vocabulary};
use fusion_nmt::decoding::{
    detokenize_all, gate_stats, translate_corpus, BeamConfig, FusionMode, Models,
};
use fusion_nmt::eval::{bleu, perplexity};
use fusion_nmt::models::{FusedModel, LmConfig, NmtConfig, NmtModel, RnnLm};
use fusion_nmt::training::{
    finetune_deep_fusion, train_lm, train_nmt, DevSet, FinetuneConfig, Hooks, OptimizerKind,
    TrainConfig,
};

fn violations(g: &NounClasses, out: &[Vec<String>]) -> (usize, usize) {
    let (mut bad, mut total) = (0, 0);
    for s in out {
        let mut prev = None;
        for (i, t) in s.iter().enumerate() {
            if i % 2 == 0 {
                total += 1;
                if *t != g.article_after(prev) {
                    bad += 1;
                }
            } else {
                prev = t.strip_prefix('y').and_then(|k| k.parse::<usize>().ok());
            }
        }
    }
    (bad, total)
}

fn arg<T: std::str::FromStr>(i: usize, d: T) -> T {
    std::env::args()
        .nth(i)
        .and_then(|s| s.parse().ok())
        .unwrap_or(d)
}

fn main() -> fusion_nmt::Result<()> {
    let seed: u64 = arg(1, 1);
    let words: usize = arg(2, 30);
    let zipf: f64 = arg(3, 1.0);
    let hidden: usize = arg(4, 32);
    let nmt_updates: usize = arg(5, 600);
    let lm_updates: usize = arg(6, 1000);
    let ft_updates: usize = arg(7, 300);
    let sizes = ToySizes {
        train: 500,
        dev: 100,
        test: 200,
        mono: 20_000,
        mono_dev: 300,
        words,
        min_len: 3,
        max_len: 6,
        classes: 3,
        zipf,
    };
    let c = make_toy_corpus(ToyKind::ConstrainedTarget, &sizes, seed)?;
    let g = c.grammar.clone().unwrap();
    let tok = Tokenizer::default();
    let split = |pairs: &[(String, String)]| -> Vec<(Vec<String>, Vec<String>)> {
        pairs
            .iter()
            .map(|(s, t)| (tok.tokenize(s), tok.tokenize(t)))
            .collect()
    };
    let (train, dev, test) = (split(&c.train), split(&c.dev), split(&c.test));
    let mono: Vec<Vec<String>> = c.mono.iter().map(|s| tok.tokenize(s)).collect();
    let mono_dev: Vec<Vec<String>> = c.mono_dev.iter().map(|s| tok.tokenize(s)).collect();
    let sv = Vocabulary::build(train.iter().map(|p| p.0.as_slice()), 1000)?;
    let tv = Vocabulary::build(mono.iter().map(Vec::as_slice), 1000)?;
    let seen: std::collections::HashSet<&String> = train.iter().flat_map(|p| &p.0).collect();
    println!(
        "src vocab {} tgt vocab {} nouns seen in bitext {}",
        sv.len(),
        tv.len(),
        seen.len()
    );
    let encode = |p: &[(Vec<String>, Vec<String>)]| -> Vec<SentencePair> {
        p.iter()
            .map(|(s, t)| SentencePair::encode(&sv, &tv, s, t).unwrap())
            .collect()
    };
    let train_ids = encode(&train);
    let dev_set = DevSet {
        sources: dev.iter().map(|p| sv.encode_sentence(&p.0)).collect(),
        references: dev.iter().map(|p| p.1.clone()).collect(),
        vocab: tv.clone(),
    };
    let t0 = Instant::now();
    let mut nc = NmtConfig::new(sv.len(), tv.len(), 16, hidden);
    nc.init_std = 0.1;
    nc.seed = seed;
    let base = TrainConfig {
        batch_size: 32,
        optimizer: OptimizerKind::adam(0.005),
        dropout: 0.0,
        weight_noise: 0.0,
        eval_interval: 100,
        patience: 100,
        dev_beam: 1,
        seed,
        ..TrainConfig::default()
    };
    let nmt = train_nmt(
        &NmtModel::<f64>::new(nc)?,
        &train_ids,
        &dev_set,
        &TrainConfig {
            max_updates: nmt_updates,
            ..base.clone()
        },
        Hooks::default(),
    )?;
    println!(
        "nmt {:.1}s evals {:?}",
        t0.elapsed().as_secs_f64(),
        nmt.report.evaluations
    );
    let t1 = Instant::now();
    let mut lc = LmConfig::new(tv.len(), 16, hidden);
    lc.init_std = 0.1;
    lc.seed = seed;
    let mono_ids: Vec<Vec<usize>> = mono.iter().map(|s| tv.encode_sentence(s)).collect();
    let mono_dev_ids: Vec<Vec<usize>> = mono_dev.iter().map(|s| tv.encode_sentence(s)).collect();
    let lm = train_lm(
        &RnnLm::<f64>::new(lc)?,
        &mono_ids,
        &mono_dev_ids,
        &TrainConfig {
            max_updates: lm_updates,
            eval_interval: 200,
            ..base.clone()
        },
        Hooks::default(),
    )?;
    println!(
        "lm {:.1}s evals {:?}",
        t1.elapsed().as_secs_f64(),
        lm.report.evaluations
    );
    let t2 = Instant::now();
    let fm = FusedModel::assemble(nmt.model.clone(), lm.model.clone())?;
    let ft = FinetuneConfig {
        train: TrainConfig {
            max_updates: ft_updates,
            update_scale: 1.0,
            ..base.clone()
        },
        ..FinetuneConfig::default()
    };
    let fused = finetune_deep_fusion(&fm, &train_ids, &dev_set, &ft, Hooks::default())?;
    println!(
        "ft {:.1}s evals {:?}",
        t2.elapsed().as_secs_f64(),
        fused.report.evaluations
    );

    let sources: Vec<Vec<usize>> = test.iter().map(|p| sv.encode_sentence(&p.0)).collect();
    let refs: Vec<Vec<String>> = test.iter().map(|p| p.1.clone()).collect();
    let beam = 4;
    let b_out = translate_corpus(
        &sources,
        &Models::new(&nmt.model),
        &BeamConfig::new(beam, FusionMode::None)?,
    )?;
    let b_h = detokenize_all(&b_out, &tv)?;
    let d_out = translate_corpus(
        &sources,
        &Models::new(&fused.model.nmt).with_fused(&fused.model),
        &BeamConfig::new(beam, FusionMode::Deep)?,
    )?;
    let d_h = detokenize_all(&d_out, &tv)?;
    let gs = gate_stats(&d_out.iter().map(|t| t.gates.clone()).collect::<Vec<_>>())?;
    println!(
        "baseline {} viol {:?}",
        bleu(&b_h, &refs)?,
        violations(&g, &b_h)
    );
    println!(
        "deep     {} viol {:?}",
        bleu(&d_h, &refs)?,
        violations(&g, &d_h)
    );
    println!(
        "gate mean {:.4} std {:.4}; lm ppl {:.3}",
        gs.mean,
        gs.std,
        perplexity(&lm.model, &mono_dev_ids)?.perplexity
    );
    Ok(())
}
