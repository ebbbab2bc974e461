//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fail.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use fusion_nmt::checkpoint::{fused_checkpoint, lm_checkpoint, nmt_checkpoint};
use fusion_nmt::data::toy::{ToyKind, ToySizes};
use fusion_nmt::data::{EOS, UNK, UNK_TOKEN};
use fusion_nmt::decoding::{
    gate_stats, lm_renormalize, replace_unk, translate, BeamConfig, FusionMode, Models,
    ShallowConfig,
};
use fusion_nmt::eval::{analysis_report, bleu, bleu_multi, perplexity, AnalysisRow};
use fusion_nmt::models::NmtModel;
use fusion_nmt::tensor::{log_softmax, Tensor};
use fusion_nmt::training::{train_nmt, Hooks, OptimizerKind, TrainConfig};

const FRESH_GATE: f64 = 0.2689;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Board {
    rows: Vec<(String, bool)>,
}

impl Board {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        self.rows.push((name.to_string(), o.pass));
    }
}

struct ConstrainedRun {
    seed: u64,
    toy: Toy,
    pipe: Pipeline,
}

fn constrained_sizes() -> ToySizes {
    ToySizes {
        train: 500,
        dev: 100,
        test: 200,
        mono: 20_000,
        mono_dev: 300,
        words: 100,
        min_len: 3,
        max_len: 6,
        classes: 3,
        zipf: 1.0,
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut record = |r: fusion_nmt::gradcheck::GradCheckReport| {
        checked += r.params.len();
        if std::env::var_os("GRADCHECK_VERBOSE").is_some() {
            eprintln!("{:?}", r.worst());
        }
        worst = worst.max(r.max_rel_err());
    };
    for seed in 0..2u64 {
        let m = nmt(7, 9, 3, 5, seed);
        record(nmt_gradcheck(
            &m,
            &ids(&[3, 4, 5, 6, 3]),
            &ids(&[4, 8, 3, 7]),
        ));
        let l = lm(9, 3, 6, seed);
        record(lm_gradcheck(&l, &ids(&[3, 8, 8, 4, 5])));
        let fm = fused(7, 9, seed);
        for part in [
            FusedPart::Translation,
            FusedPart::Language,
            FusedPart::Output,
        ] {
            record(fused_gradcheck(
                &fm,
                part,
                &ids(&[5, 3, 6]),
                &ids(&[7, 3, 4, 8, 5]),
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 120.0,
        format!("{checked} parameter blocks, max relative error {worst:.2e}"),
    )
}

fn attention_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut steps, mut worst_sum, mut worst_bound) = (0, 0.0f64, 0.0f64);
    let mut seed = 0;
    while steps < 1000 {
        let m = nmt(11, 9, 4, 6, seed);
        seed += 1;
        for _ in 0..10 {
            let len = rng.random_range(1..8);
            let src: Vec<usize> = (0..len).map(|_| rng.random_range(0..11)).collect();
            let enc = m.encode(&src).unwrap();
            let mut s = enc.initial_state.clone();
            for _ in 0..10 {
                let step = m.decode_step(&s, rng.random_range(0..9), &enc).unwrap();
                let a = step.scores.alpha.data();
                worst_sum = worst_sum.max((a.iter().sum::<f64>() - 1.0).abs());
                for (k, &c) in step.context.data().iter().enumerate() {
                    let col: Vec<f64> = (0..enc.len()).map(|j| enc.rows.row(j)[k]).collect();
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    worst_bound = worst_bound.max(lo - c).max(c - hi);
                }
                s = step.state;
                steps += 1;
            }
        }
    }
    outcome(
        worst_sum <= 1e-10 && worst_bound <= 1e-12,
        format!("{steps} steps, max |sum - 1| {worst_sum:.1e}, max bound excess {worst_bound:.1e}"),
    )
}

fn shallow_identity(copy: &Toy, model: &NmtModel<f64>) -> Outcome {
    let lm = lm(copy.tgt_vocab.len(), 8, 16, 3);
    let models = Models::new(model).with_lm(&lm);
    let zero = FusionMode::Shallow(ShallowConfig::new(0.0).unwrap());
    let mut same = 0;
    for src in &copy.test_sources {
        let a = translate(src, &models, &BeamConfig::new(4, FusionMode::None).unwrap()).unwrap();
        let b = translate(src, &models, &BeamConfig::new(4, zero.clone()).unwrap()).unwrap();
        if a.tokens == b.tokens && a.score.to_bits() == b.score.to_bits() {
            same += 1;
        }
    }
    let n = copy.test_sources.len();
    outcome(
        n == 100 && same == n,
        format!("{same}/{n} sentences identical in tokens and score bits"),
    )
}

fn beam_oracle() -> Outcome {
    let start = Instant::now();
    let (mut agree, mut total, mut worst) = (0, 0, 0.0f64);
    for seed in 0..3u64 {
        let fm = fused(5, 4, seed);
        let models = Models::new(&fm.nmt).with_lm(&fm.lm).with_fused(&fm);
        for src in [ids(&[3]), ids(&[3, 4, 3]), ids(&[4, 4])] {
            for mode in [
                FusionMode::None,
                FusionMode::Shallow(ShallowConfig::new(0.05).unwrap()),
                FusionMode::Deep,
            ] {
                let mut cfg = BeamConfig::new(256, mode.clone()).unwrap();
                cfg.max_len = Some(4);
                let t = translate(&src, &models, &cfg).unwrap();
                let (want, score) = exhaustive_best(&fm.nmt, &fm.lm, &fm, &mode, &src, 4, 4);
                total += 1;
                let err = (t.score - score).abs();
                worst = worst.max(err);
                if t.tokens == want && err <= 1e-10 {
                    agree += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        agree == total && secs < 60.0,
        format!("{agree}/{total} searches equal the enumeration argmax, max score gap {worst:.1e}"),
    )
}

fn copy_task(copy: &Toy) -> (Outcome, Option<NmtModel<f64>>, Vec<f64>) {
    let start = Instant::now();
    let mut cfg =
        fusion_nmt::models::NmtConfig::new(copy.src_vocab.len(), copy.tgt_vocab.len(), 32, 64);
    cfg.init_std = 0.1;
    let model = NmtModel::new(cfg).unwrap();
    let trained = train_nmt(
        &model,
        &copy.train,
        &copy.dev,
        &toy_train_config(1, 400),
        Hooks::default(),
    )
    .unwrap();
    let (_, hyps) = copy.decode(&Models::new(&trained.model), 4, FusionMode::None);
    let score = bleu(&hyps, &copy.test_refs).unwrap().score;
    let secs = start.elapsed().as_secs_f64();
    (
        outcome(
            score >= 95.0 && secs < 600.0 && copy.tgt_vocab.len() == 12 && copy.train.len() == 2000,
            format!(
                "vocab {}, test BLEU {score:.2} after {secs:.0}s of training and decoding",
                copy.tgt_vocab.len()
            ),
        ),
        Some(trained.model),
        trained.report.clipped_norms,
    )
}

fn deep_fusion_benefit(runs: &[ConstrainedRun]) -> Outcome {
    let (mut gain, mut base_viol, mut deep_viol) = (0.0, 0, 0);
    let mut parts = Vec::new();
    for r in runs {
        let g = r.toy.grammar.as_ref().unwrap();
        let (_, b) = r
            .toy
            .decode(&Models::new(&r.pipe.nmt.model), 4, FusionMode::None);
        let fm = &r.pipe.fused.model;
        let (_, d) = r
            .toy
            .decode(&Models::new(&fm.nmt).with_fused(fm), 4, FusionMode::Deep);
        let (bb, db) = (
            bleu(&b, &r.toy.test_refs).unwrap().score,
            bleu(&d, &r.toy.test_refs).unwrap().score,
        );
        let (bv, dv) = (constraint_violations(g, &b), constraint_violations(g, &d));
        gain += db - bb;
        base_viol += bv.0;
        deep_viol += dv.0;
        parts.push(format!(
            "seed {} {bb:.2}->{db:.2} viol {}->{}",
            r.seed, bv.0, dv.0
        ));
    }
    let gain = gain / runs.len() as f64;
    outcome(
        gain > 0.0 && deep_viol < base_viol,
        format!(
            "mean gain {gain:+.2} BLEU, violations {base_viol}->{deep_viol} ({})",
            parts.join("; ")
        ),
    )
}

fn gate_behaviour(runs: &[ConstrainedRun]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut rows = Vec::new();
    for r in runs {
        let gates = |fm: &fusion_nmt::models::FusedModel<f64>| {
            let (out, _) = r
                .toy
                .decode(&Models::new(&fm.nmt).with_fused(fm), 4, FusionMode::Deep);
            gate_stats(&out.iter().map(|t| t.gates.clone()).collect::<Vec<_>>()).unwrap()
        };
        let fresh = gates(&r.pipe.fresh);
        let tuned = gates(&r.pipe.fused.model);
        ok &= (fresh.mean - FRESH_GATE).abs() <= 1e-3;
        ok &= (tuned.mean - FRESH_GATE).abs() >= 0.01 && tuned.mean > 0.0 && tuned.mean < 1.0;
        parts.push(format!(
            "seed {} fresh {:.4} tuned {:.4}",
            r.seed, fresh.mean, tuned.mean
        ));
        rows.push(AnalysisRow {
            label: format!("constrained-{}", r.seed),
            perplexity: perplexity(&r.pipe.lm.model, &r.toy.mono_dev).unwrap(),
            gates: tuned,
        });
    }
    let report = analysis_report(&rows);
    let header = report.lines().next().unwrap_or_default().to_string();
    let table_ok = header.split_whitespace().collect::<Vec<_>>()
        == ["task", "perplexity", "avg_g", "std_g"]
        && rows
            .iter()
            .all(|r| report.lines().any(|l| l.starts_with(&r.label)));
    outcome(
        ok && table_ok,
        format!("{}; report header `{header}`", parts.join("; ")),
    )
}

fn freezing(runs: &[ConstrainedRun], extra: &Pipeline) -> Outcome {
    let mut blocks = 0;
    let mut same = true;
    for p in runs.iter().map(|r| &r.pipe).chain([extra]) {
        let tuned = &p.fused.model;
        same &= tuned.nmt.params.digest() == p.nmt.model.params.digest();
        same &= tuned.lm.params.digest() == p.lm.model.params.digest();
        for (a, b) in tuned.nmt.params.iter().zip(p.nmt.model.params.iter()) {
            same &= a.id == b.id && a.value == b.value;
            blocks += 1;
        }
        for (a, b) in tuned.lm.params.iter().zip(p.lm.model.params.iter()) {
            same &= a.id == b.id && a.value == b.value;
            blocks += 1;
        }
        same &= tuned.params.digest() != p.fresh.params.digest();
    }
    outcome(
        same,
        format!(
            "{blocks} frozen blocks unchanged across {} finetune runs",
            runs.len() + 1
        ),
    )
}

fn clipping(mut norms: Vec<f64>) -> Outcome {
    let mut nc = fusion_nmt::models::NmtConfig::new(9, 9, 6, 12);
    nc.init_std = 1.0;
    let toy = Toy::new(
        ToyKind::Copy,
        &ToySizes {
            train: 200,
            dev: 10,
            test: 10,
            ..ToySizes::default()
        },
        3,
    );
    let nc = fusion_nmt::models::NmtConfig {
        src_vocab: toy.src_vocab.len(),
        tgt_vocab: toy.tgt_vocab.len(),
        ..nc
    };
    let cfg = TrainConfig {
        batch_size: 16,
        optimizer: OptimizerKind::rmsprop(0.05),
        max_updates: 60,
        eval_interval: 60,
        dev_beam: 1,
        ..TrainConfig::default()
    };
    let run = train_nmt(
        &NmtModel::<f64>::new(nc).unwrap(),
        &toy.train,
        &toy.dev,
        &cfg,
        Hooks::default(),
    )
    .unwrap();
    let above = run.report.grad_norms.iter().filter(|&&g| g > 5.0).count();
    norms.extend(run.report.clipped_norms);
    let max = norms.iter().copied().fold(0.0, f64::max);
    outcome(
        max <= 5.0 + 1e-10 && above > 0,
        format!(
            "{} updates, max post-clip norm {max:.6}, {above} raw norms above 5 in the stress run",
            norms.len()
        ),
    )
}

fn bleu_correctness() -> Outcome {
    let t = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let same = vec![t("a b c d e"), t("the quick brown fox jumps over")];
    let identical = bleu(&same, &same).unwrap().score;
    let bp = (1.0f64 - 4.0 / 3.0).exp();
    let strict = bleu(&[t("the cat sat")], &[t("the cat sat down")]).unwrap();
    let strict_ok = strict.precisions == [1.0, 1.0, 1.0, 0.0]
        && strict.totals == [3, 2, 1, 0]
        && (strict.brevity_penalty - bp).abs() < 1e-12
        && strict.score == 0.0;
    let cat = bleu_multi(&[t("the cat sat")], &[vec![t("the cat sat down")]], true)
        .unwrap()
        .score;
    let hand = 100.0 * bp;
    let lm = uniform_lm(12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let corpus: Vec<Vec<usize>> = (0..20)
        .map(|_| {
            let mut s: Vec<usize> = (0..rng.random_range(1..9))
                .map(|_| rng.random_range(3..12))
                .collect();
            s.push(EOS);
            s
        })
        .collect();
    let ppl = perplexity(&lm, &corpus).unwrap().perplexity;
    outcome(
        identical == 100.0 && strict_ok && (cat - hand).abs() < 1e-6 && ppl == 12.0,
        format!(
            "identical {identical}, cat example strict {} smoothed {cat:.6} (hand 0 and {hand:.6}), uniform perplexity {ppl}",
            strict.score
        ),
    )
}

fn renormalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(3..60);
        let scale = rng.random_range(0.1..20.0);
        let logits: Vec<f64> = (0..n)
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect();
        let lp = Tensor::vector(log_softmax(&logits).unwrap());
        let r = lm_renormalize(&lp, &[EOS, UNK]).unwrap();
        let mass: f64 = r
            .log_probs
            .data()
            .iter()
            .zip(&r.excluded)
            .filter(|(_, &e)| !e)
            .map(|(v, _)| v.exp())
            .sum();
        worst = worst.max((mass - 1.0).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("1000 distributions, max |mass - 1| {worst:.1e}"),
    )
}

fn unk_replacement() -> Outcome {
    let t = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let source = t("Obama met Putin in Sochi");
    let target = t(&format!("{UNK_TOKEN} traf {UNK_TOKEN} in {UNK_TOKEN} </s>"));
    let rows = [
        [0.70, 0.10, 0.10, 0.05, 0.04, 0.01],
        [0.05, 0.80, 0.05, 0.05, 0.04, 0.01],
        [0.10, 0.10, 0.60, 0.10, 0.09, 0.01],
        [0.05, 0.05, 0.05, 0.80, 0.04, 0.01],
        [0.02, 0.03, 0.05, 0.10, 0.79, 0.01],
        [0.01, 0.01, 0.01, 0.01, 0.01, 0.95],
    ];
    let attention: Vec<Tensor<f64>> = rows.iter().map(|r| Tensor::vector(r.to_vec())).collect();
    let out = replace_unk(&target, &attention, &source);
    let want = t("Obama traf Putin in Sochi </s>");
    outcome(out == want, format!("`{}`", out.join(" ")))
}

fn determinism() -> Outcome {
    let sizes = ToySizes {
        train: 120,
        dev: 20,
        test: 20,
        mono: 400,
        mono_dev: 40,
        words: 20,
        min_len: 2,
        max_len: 4,
        classes: 3,
        zipf: 1.0,
    };
    let ps = PipelineSizes {
        embed: 6,
        hidden: 8,
        nmt_updates: 20,
        lm_updates: 20,
        ft_updates: 10,
    };
    let run = || {
        let toy = Toy::new(ToyKind::ConstrainedTarget, &sizes, 9);
        let p = run_pipeline(&toy, &ps, 9);
        let bytes = [
            nmt_checkpoint(&p.nmt.model).to_bytes().unwrap(),
            lm_checkpoint(&p.lm.model).to_bytes().unwrap(),
            fused_checkpoint(&p.fused.model).to_bytes().unwrap(),
        ];
        let fm = &p.fused.model;
        let models = Models::new(&p.nmt.model)
            .with_lm(&p.lm.model)
            .with_fused(fm);
        let mut text = String::new();
        for mode in [
            FusionMode::None,
            FusionMode::Shallow(ShallowConfig::new(0.1).unwrap()),
            FusionMode::Deep,
        ] {
            let (out, hyps) = toy.decode(&models, 3, mode);
            for (t, h) in out.iter().zip(hyps) {
                text.push_str(&format!("{}\t{:016x}\n", h.join(" "), t.score.to_bits()));
            }
        }
        (bytes, text, p)
    };
    let (a, ta, pipe) = run();
    let (b, tb, _) = run();
    let size: usize = a.iter().map(Vec::len).sum();
    let same = a == b && ta == tb;
    let o = outcome(
        same,
        format!(
            "{size} checkpoint bytes and {} translation lines identical",
            ta.lines().count()
        ),
    );
    DETERMINISM_PIPE.with(|c| *c.borrow_mut() = Some(pipe));
    o
}

thread_local! {
    static DETERMINISM_PIPE: std::cell::RefCell<Option<Pipeline>> = const { std::cell::RefCell::new(None) };
}

fn main() {
    let mut board = Board { rows: Vec::new() };
    board.run("gradient fidelity", gradient_fidelity);
    board.run("attention normalization", attention_normalization);
    board.run("beam vs exhaustive oracle", beam_oracle);
    board.run("BLEU and perplexity correctness", bleu_correctness);
    board.run("LM renormalization", renormalization);
    board.run("UNK replacement", unk_replacement);
    board.run("determinism", determinism);

    let copy = Toy::new(ToyKind::Copy, &ToySizes::default(), 1);
    let mut copy_model = None;
    let mut norms = Vec::new();
    board.run("toy copy task", || {
        let (o, m, n) = copy_task(&copy);
        copy_model = m;
        norms = n;
        o
    });
    board.run("shallow fusion identity", || match &copy_model {
        Some(m) => shallow_identity(&copy, m),
        None => outcome(false, "copy model unavailable"),
    });

    let runs: Vec<ConstrainedRun> = (1..=3u64)
        .filter_map(|seed| {
            catch_unwind(|| {
                let toy = Toy::new(ToyKind::ConstrainedTarget, &constrained_sizes(), seed);
                let sizes = PipelineSizes {
                    embed: 16,
                    hidden: 32,
                    nmt_updates: 600,
                    lm_updates: 1000,
                    ft_updates: 300,
                };
                let pipe = run_pipeline(&toy, &sizes, seed);
                ConstrainedRun { seed, toy, pipe }
            })
            .ok()
        })
        .collect();
    for r in &runs {
        norms.extend(&r.pipe.nmt.report.clipped_norms);
        norms.extend(&r.pipe.lm.report.clipped_norms);
        norms.extend(&r.pipe.fused.report.clipped_norms);
    }
    let have_runs = runs.len() == 3;
    board.run("deep fusion benefit", || {
        if have_runs {
            deep_fusion_benefit(&runs)
        } else {
            outcome(false, "constrained pipeline failed")
        }
    });
    board.run("gate behaviour", || {
        if have_runs {
            gate_behaviour(&runs)
        } else {
            outcome(false, "constrained pipeline failed")
        }
    });
    board.run("freezing contract", || {
        DETERMINISM_PIPE.with(|c| match c.borrow().as_ref() {
            Some(p) if have_runs => freezing(&runs, p),
            _ => outcome(false, "pipelines unavailable"),
        })
    });
    board.run("gradient clipping", || clipping(norms.clone()));

    let failed: Vec<&str> = board
        .rows
        .iter()
        .filter(|r| !r.1)
        .map(|r| r.0.as_str())
        .collect();
    println!(
        "{}/{} criteria passed",
        board.rows.len() - failed.len(),
        board.rows.len()
    );
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
