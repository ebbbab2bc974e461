use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fusion_nmt::checkpoint::{self, Checkpoint};
use fusion_nmt::config::RunConfig;
use fusion_nmt::data::toy::{make_toy_corpus, ToyKind, ToySizes};
use fusion_nmt::data::{
    drop_oov_heavy, filter_pairs, read_lines, SentencePair, Tokenizer, Vocabulary,
};
use fusion_nmt::decoding::{
    beta_grid, gate_stats, replace_unk, sweep_beta, translate, BeamConfig, FusionMode, Models,
    ShallowConfig, Translation,
};
use fusion_nmt::eval::{analysis_report, bleu_multi, perplexity, AnalysisRow};
use fusion_nmt::models::{FusedModel, NmtModel, RnnLm};
use fusion_nmt::training::{
    finetune_deep_fusion, train_lm, train_nmt, DevSet, Hooks, ResumeState, TrainReport,
};
use fusion_nmt::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fusion-nmt",
    version,
    about = "Neural machine translation with language-model fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from tokenized text
    BuildVocab(BuildVocab),
    /// Write a synthetic corpus (copy, reverse or constrained-target)
    GenToy(GenToy),
    /// Train the recurrent language model
    TrainLm(TrainArgs),
    /// Train the attention translation model
    TrainNmt(TrainArgs),
    /// Assemble a deep-fusion model and train its output layer and gate
    Finetune(FinetuneArgs),
    /// Translate sentences, one per line
    Translate(TranslateArgs),
    /// Score translations or models
    Evaluate(EvaluateArgs),
    /// Dev-set BLEU of shallow fusion over a grid of beta values
    SweepBeta(SweepArgs),
}

#[derive(Args, Clone, Copy)]
struct TokenizerArgs {
    /// Keep the original letter case
    #[arg(long)]
    no_lowercase: bool,
    /// Treat every character as a token
    #[arg(long)]
    char_mode: bool,
}

impl TokenizerArgs {
    fn tokenizer(&self) -> Tokenizer {
        Tokenizer {
            lowercase: !self.no_lowercase,
            char_mode: self.char_mode,
        }
    }
}

#[derive(Args)]
struct BuildVocab {
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Total number of ids, reserved symbols included
    #[arg(long, default_value_t = 30_000)]
    cap: usize,
    #[command(flatten)]
    tok: TokenizerArgs,
}

#[derive(Args)]
struct GenToy {
    #[arg(long, value_parser = parse_toy_kind)]
    kind: ToyKind,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    dev: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    mono: usize,
    #[arg(long, default_value_t = 0)]
    mono_dev: usize,
    #[arg(long, default_value_t = 9)]
    words: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 9)]
    max_len: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 0.0)]
    zipf: f64,
}

fn parse_toy_kind(s: &str) -> std::result::Result<ToyKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint written at every evaluation and at the end
    #[arg(long)]
    out: PathBuf,
    /// Tab-separated training log; defaults to `<out>.log`
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from the training state stored in `--out`
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    nmt: PathBuf,
    #[arg(long)]
    lm: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    None,
    Shallow,
    Deep,
}

#[derive(Args)]
struct ModelArgs {
    /// Translation model checkpoint (modes none and shallow)
    #[arg(long)]
    nmt: Option<PathBuf>,
    /// Language-model checkpoint (mode shallow)
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Deep-fusion checkpoint (mode deep)
    #[arg(long)]
    fused: Option<PathBuf>,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[command(flatten)]
    tok: TokenizerArgs,
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long, value_enum, default_value = "none")]
    mode: Mode,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 12)]
    beam: usize,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    length_norm: bool,
    /// Copy the most attended source word over every unknown-word token
    #[arg(long)]
    replace_unk: bool,
    /// Write each sentence's attention matrix here
    #[arg(long)]
    dump_attention: Option<PathBuf>,
    /// Write each sentence's fusion-gate values here (mode deep)
    #[arg(long)]
    dump_gates: Option<PathBuf>,
    /// Source sentences; standard input when absent
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Corpus BLEU of --hyp against one or more --ref files
    #[arg(long)]
    bleu: bool,
    /// Perplexity of --lm on --input
    #[arg(long)]
    perplexity: bool,
    /// Fusion-gate statistics of --fused while translating --source
    #[arg(long)]
    gate_stats: bool,
    #[arg(long)]
    hyp: Option<PathBuf>,
    #[arg(long = "ref")]
    refs: Vec<PathBuf>,
    /// Add-one smoothing for orders two and above
    #[arg(long)]
    smooth: bool,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    fused: Option<PathBuf>,
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    beam: usize,
    /// Row label of the analysis table
    #[arg(long, default_value = "dev")]
    label: String,
    #[command(flatten)]
    tok: TokenizerArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    nmt: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value_t = 12)]
    beam: usize,
    /// Number of log-spaced values in [0.001, 0.1]
    #[arg(long, default_value_t = 10)]
    points: usize,
    /// Prepend beta = 0 to the grid
    #[arg(long)]
    include_zero: bool,
    /// Explicit comma-separated beta values, replacing the grid
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    #[command(flatten)]
    tok: TokenizerArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildVocab(a) => build_vocab(a),
        Command::GenToy(a) => gen_toy(a),
        Command::TrainLm(a) => cmd_train_lm(a),
        Command::TrainNmt(a) => cmd_train_nmt(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Translate(a) => cmd_translate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::SweepBeta(a) => cmd_sweep(a),
    }
}

fn read_tokenized(path: &Path, tok: Tokenizer) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?.iter().map(|l| tok.tokenize(l)).collect())
}

fn read_input(path: Option<&Path>, tok: Tokenizer) -> Result<Vec<Vec<String>>> {
    match path {
        Some(p) => read_tokenized(p, tok),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            Ok(s.lines().map(|l| tok.tokenize(l)).collect())
        }
    }
}

fn required<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Config(format!("{what} is required")))
}

fn build_vocab(a: BuildVocab) -> Result<()> {
    let tok = a.tok.tokenizer();
    let mut sentences = Vec::new();
    for p in &a.inputs {
        sentences.extend(read_tokenized(p, tok)?);
    }
    let v = Vocabulary::build(sentences.iter().map(Vec::as_slice), a.cap)?;
    v.save(&a.output)?;
    eprintln!("{} ids written to {}", v.len(), a.output.display());
    Ok(())
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = impl AsRef<str>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in lines {
        writeln!(w, "{}", l.as_ref())?;
    }
    w.flush()?;
    Ok(())
}

fn gen_toy(a: GenToy) -> Result<()> {
    let sizes = ToySizes {
        train: a.train,
        dev: a.dev,
        test: a.test,
        mono: a.mono,
        mono_dev: a.mono_dev,
        words: a.words,
        min_len: a.min_len,
        max_len: a.max_len,
        classes: a.classes,
        zipf: a.zipf,
    };
    let c = make_toy_corpus(a.kind, &sizes, a.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (name, pairs) in [("train", &c.train), ("dev", &c.dev), ("test", &c.test)] {
        write_lines(
            &a.out_dir.join(format!("{name}.src")),
            pairs.iter().map(|p| &p.0),
        )?;
        write_lines(
            &a.out_dir.join(format!("{name}.tgt")),
            pairs.iter().map(|p| &p.1),
        )?;
    }
    if !c.mono.is_empty() {
        write_lines(&a.out_dir.join("mono.txt"), &c.mono)?;
    }
    if !c.mono_dev.is_empty() {
        write_lines(&a.out_dir.join("mono_dev.txt"), &c.mono_dev)?;
    }
    if let Some(g) = &c.grammar {
        let lines = g
            .classes
            .iter()
            .enumerate()
            .map(|(k, c)| format!("y{k}\t{c}"));
        write_lines(&a.out_dir.join("classes.tsv"), lines)?;
    }
    Ok(())
}

fn load_vocab(path: Option<&Path>, key: &str) -> Result<Vocabulary> {
    let p = path.ok_or_else(|| Error::Config(format!("{key} is required")))?;
    Vocabulary::load(p)
}

fn tokenizer_of(cfg: &RunConfig) -> Tokenizer {
    Tokenizer {
        lowercase: cfg.data.lowercase,
        char_mode: cfg.data.char_mode,
    }
}

/// Tokenized training pairs that pass the length filters.
fn load_bitext(
    cfg: &RunConfig,
    src: Option<&Path>,
    tgt: Option<&Path>,
    filter: bool,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let tok = tokenizer_of(cfg);
    let s = read_tokenized(
        src.ok_or_else(|| Error::Config("data.src_* path is required".into()))?,
        tok,
    )?;
    let t = read_tokenized(
        tgt.ok_or_else(|| Error::Config("data.tgt_* path is required".into()))?,
        tok,
    )?;
    if s.len() != t.len() {
        return Err(Error::Data(format!(
            "{} source lines but {} target lines",
            s.len(),
            t.len()
        )));
    }
    let pairs: Vec<_> = s.into_iter().zip(t).collect();
    if !filter {
        return Ok(pairs);
    }
    let (kept, stats) = filter_pairs(&pairs, cfg.data.max_len, cfg.data.length_ratio)?;
    eprintln!(
        "kept {} pairs ({} too long, {} length mismatch)",
        stats.kept, stats.too_long, stats.length_mismatch
    );
    Ok(kept)
}

fn encode_pairs(
    pairs: &[(Vec<String>, Vec<String>)],
    sv: &Vocabulary,
    tv: &Vocabulary,
) -> Result<Vec<SentencePair>> {
    pairs
        .iter()
        .map(|(s, t)| SentencePair::encode(sv, tv, s, t))
        .collect()
}

fn dev_set(cfg: &RunConfig, sv: &Vocabulary, tv: &Vocabulary) -> Result<DevSet> {
    let p = &cfg.data.paths;
    let pairs = load_bitext(cfg, p.src_dev.as_deref(), p.tgt_dev.as_deref(), false)?;
    Ok(DevSet {
        sources: pairs.iter().map(|(s, _)| sv.encode_sentence(s)).collect(),
        references: pairs.into_iter().map(|(_, t)| t).collect(),
        vocab: tv.clone(),
    })
}

/// Log sink; appends when resuming so the file stays one continuous record.
fn open_log(args: &TrainArgs) -> Result<BufWriter<File>> {
    let path = args
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log", args.out.display())));
    let f = if args.resume {
        OpenOptions::new().create(true).append(true).open(path)?
    } else {
        File::create(path)?
    };
    Ok(BufWriter::new(f))
}

fn save_state(mut ck: Checkpoint, state: &ResumeState<f64>, seed: u64, path: &Path) -> Result<()> {
    ck.set("train.seed", seed);
    ck.set("train.updates", state.update);
    ck.set("train.best_update", state.early.best_update);
    if let Some(b) = state.early.best {
        ck.set("train.best_metric", b);
    }
    checkpoint::push_resume(&mut ck, state);
    ck.save(path)
}

fn report_summary(r: &TrainReport, metric: &str) {
    eprintln!(
        "{} updates, best {metric} {} at update {}{}",
        r.updates,
        r.best_metric
            .map_or("n/a".to_string(), |m| format!("{m:.4}")),
        r.best_update,
        if r.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
}

fn resume_from<T, F>(args: &TrainArgs, load: F) -> Result<Option<(T, ResumeState<f64>)>>
where
    F: Fn(&Checkpoint) -> Result<T>,
    T: HasParams,
{
    if !args.resume || !args.out.exists() {
        return Ok(None);
    }
    let ck = Checkpoint::load(&args.out)?;
    let model = load(&ck)?;
    let state = checkpoint::resume_state(&ck, model.params())?
        .ok_or_else(|| Error::Format(format!("{} holds no training state", args.out.display())))?;
    Ok(Some((model, state)))
}

trait HasParams {
    fn params(&self) -> &fusion_nmt::ParameterSet64;
}

impl HasParams for NmtModel<f64> {
    fn params(&self) -> &fusion_nmt::ParameterSet64 {
        &self.params
    }
}

impl HasParams for RnnLm<f64> {
    fn params(&self) -> &fusion_nmt::ParameterSet64 {
        &self.params
    }
}

impl HasParams for FusedModel<f64> {
    fn params(&self) -> &fusion_nmt::ParameterSet64 {
        &self.params
    }
}

fn cmd_train_lm(args: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let p = &cfg.data.paths;
    let vocab = load_vocab(p.tgt_vocab.as_deref(), "data.tgt_vocab")?;
    let tok = tokenizer_of(&cfg);
    let mono = read_tokenized(required(&p.mono_train, "data.mono_train")?, tok)?;
    let (kept, dropped) = drop_oov_heavy(&mono, &vocab)?;
    eprintln!(
        "kept {} sentences, dropped {dropped} with over 10% unknown words",
        kept.len()
    );
    let train: Vec<Vec<usize>> = kept.iter().map(|s| vocab.encode_sentence(s)).collect();
    let dev: Vec<Vec<usize>> = read_tokenized(required(&p.mono_dev, "data.mono_dev")?, tok)?
        .iter()
        .map(|s| vocab.encode_sentence(s))
        .collect();

    let (lm, resume) = match resume_from(&args, checkpoint::lm_from_checkpoint)? {
        Some((m, s)) => (m, Some(s)),
        None => {
            let mut c = cfg.lm_config(vocab.len());
            c.vocab_digest = Some(vocab.digest());
            (RnnLm::new(c)?, None)
        }
    };
    let mut log = open_log(&args)?;
    let mut save = |s: &ResumeState<f64>| {
        let mut m = lm.clone();
        m.params = s.best.clone();
        save_state(checkpoint::lm_checkpoint(&m), s, cfg.seed, &args.out)
    };
    let hooks = Hooks {
        log: Some(&mut log),
        on_eval: Some(&mut save),
        resume,
    };
    let out = train_lm(&lm, &train, &dev, &cfg.lm_train, hooks)?;
    log.flush()?;
    save_state(
        checkpoint::lm_checkpoint(&out.model),
        &out.last,
        cfg.seed,
        &args.out,
    )?;
    report_summary(&out.report, "perplexity");
    Ok(())
}

fn cmd_train_nmt(args: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let p = &cfg.data.paths;
    let sv = load_vocab(p.src_vocab.as_deref(), "data.src_vocab")?;
    let tv = load_vocab(p.tgt_vocab.as_deref(), "data.tgt_vocab")?;
    let pairs = load_bitext(&cfg, p.src_train.as_deref(), p.tgt_train.as_deref(), true)?;
    let train = encode_pairs(&pairs, &sv, &tv)?;
    let dev = dev_set(&cfg, &sv, &tv)?;

    let (model, resume) = match resume_from(&args, checkpoint::nmt_from_checkpoint)? {
        Some((m, s)) => (m, Some(s)),
        None => {
            let mut c = cfg.nmt_config(sv.len(), tv.len());
            c.tgt_vocab_digest = Some(tv.digest());
            (NmtModel::new(c)?, None)
        }
    };
    let mut log = open_log(&args)?;
    let mut save = |s: &ResumeState<f64>| {
        let mut m = model.clone();
        m.params = s.best.clone();
        save_state(checkpoint::nmt_checkpoint(&m), s, cfg.seed, &args.out)
    };
    let hooks = Hooks {
        log: Some(&mut log),
        on_eval: Some(&mut save),
        resume,
    };
    let out = train_nmt(&model, &train, &dev, &cfg.train, hooks)?;
    log.flush()?;
    save_state(
        checkpoint::nmt_checkpoint(&out.model),
        &out.last,
        cfg.seed,
        &args.out,
    )?;
    report_summary(&out.report, "BLEU");
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs) -> Result<()> {
    let targs = &args.train;
    let cfg = RunConfig::load(&targs.config)?;
    let p = &cfg.data.paths;
    let sv = load_vocab(p.src_vocab.as_deref(), "data.src_vocab")?;
    let tv = load_vocab(p.tgt_vocab.as_deref(), "data.tgt_vocab")?;
    let pairs = load_bitext(&cfg, p.src_train.as_deref(), p.tgt_train.as_deref(), true)?;
    let train = encode_pairs(&pairs, &sv, &tv)?;
    let dev = dev_set(&cfg, &sv, &tv)?;

    let (fm, resume) = match resume_from(targs, checkpoint::fused_from_checkpoint)? {
        Some((m, s)) => (m, Some(s)),
        None => {
            let nmt = checkpoint::nmt_from_checkpoint(&Checkpoint::load(&args.nmt)?)?;
            let lm = checkpoint::lm_from_checkpoint(&Checkpoint::load(&args.lm)?)?;
            (FusedModel::assemble(nmt, lm)?, None)
        }
    };
    let mut log = open_log(targs)?;
    let mut save = |s: &ResumeState<f64>| {
        let mut m = fm.clone();
        m.params = s.best.clone();
        save_state(checkpoint::fused_checkpoint(&m), s, cfg.seed, &targs.out)
    };
    let hooks = Hooks {
        log: Some(&mut log),
        on_eval: Some(&mut save),
        resume,
    };
    let out = finetune_deep_fusion(&fm, &train, &dev, &cfg.finetune, hooks)?;
    log.flush()?;
    save_state(
        checkpoint::fused_checkpoint(&out.model),
        &out.last,
        cfg.seed,
        &targs.out,
    )?;
    report_summary(&out.report, "BLEU");
    Ok(())
}

struct Loaded {
    nmt: Option<NmtModel<f64>>,
    lm: Option<RnnLm<f64>>,
    fused: Option<FusedModel<f64>>,
    src: Vocabulary,
    tgt: Vocabulary,
}

impl Loaded {
    fn new(a: &ModelArgs, mode: Mode) -> Result<Self> {
        let src = Vocabulary::load(&a.src_vocab)?;
        let tgt = Vocabulary::load(&a.tgt_vocab)?;
        let (mut nmt, mut lm, mut fused) = (None, None, None);
        match mode {
            Mode::Deep => {
                let ck = Checkpoint::load(required(&a.fused, "--fused")?)?;
                fused = Some(checkpoint::fused_from_checkpoint(&ck)?);
            }
            Mode::Shallow | Mode::None => {
                let ck = Checkpoint::load(required(&a.nmt, "--nmt")?)?;
                nmt = Some(checkpoint::nmt_from_checkpoint(&ck)?);
                if matches!(mode, Mode::Shallow) {
                    let ck = Checkpoint::load(required(&a.lm, "--lm")?)?;
                    lm = Some(checkpoint::lm_from_checkpoint(&ck)?);
                }
            }
        }
        let l = Loaded {
            nmt,
            lm,
            fused,
            src,
            tgt,
        };
        let m = l.translation_model();
        if m.config.src_vocab != l.src.len() || m.config.tgt_vocab != l.tgt.len() {
            return Err(Error::Config(
                "vocabulary files do not match the model sizes".into(),
            ));
        }
        if m.config
            .tgt_vocab_digest
            .as_ref()
            .is_some_and(|d| *d != l.tgt.digest())
        {
            return Err(Error::Config(
                "target vocabulary differs from the one the model was trained with".into(),
            ));
        }
        Ok(l)
    }

    fn translation_model(&self) -> &NmtModel<f64> {
        match (&self.nmt, &self.fused) {
            (Some(n), _) => n,
            (None, Some(f)) => &f.nmt,
            (None, None) => unreachable!("a model is always loaded"),
        }
    }

    fn models(&self) -> Models<'_, f64> {
        let mut m = Models::new(self.translation_model());
        if let Some(lm) = &self.lm {
            m = m.with_lm(lm);
        }
        if let Some(f) = &self.fused {
            m = m.with_fused(f);
        }
        m
    }
}

fn fusion_mode(mode: Mode, beta: f64) -> Result<FusionMode> {
    Ok(match mode {
        Mode::None => FusionMode::None,
        Mode::Shallow => FusionMode::Shallow(ShallowConfig::new(beta)?),
        Mode::Deep => FusionMode::Deep,
    })
}

fn cmd_translate(a: TranslateArgs) -> Result<()> {
    let loaded = Loaded::new(&a.models, a.mode)?;
    let models = loaded.models();
    let mut cfg = BeamConfig::new(a.beam, fusion_mode(a.mode, a.beta)?)?;
    cfg.max_len = a.max_len;
    cfg.length_norm = a.length_norm;
    let sentences = read_input(a.input.as_deref(), a.models.tok.tokenizer())?;

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut att = a
        .dump_attention
        .as_deref()
        .map(File::create)
        .transpose()?
        .map(BufWriter::new);
    let mut gates = a
        .dump_gates
        .as_deref()
        .map(File::create)
        .transpose()?
        .map(BufWriter::new);
    for (i, words) in sentences.iter().enumerate() {
        let source = loaded.src.encode_sentence(words);
        let t: Translation<f64> = translate(&source, &models, &cfg)?;
        let mut toks = loaded.tgt.decode(t.words())?;
        if a.replace_unk {
            toks = replace_unk(&toks, &t.attention, words);
        }
        writeln!(out, "{}", toks.join(" "))?;
        if let Some(w) = att.as_mut() {
            writeln!(
                w,
                "# sentence {i} rows {} cols {}",
                t.attention.len(),
                source.len()
            )?;
            for row in &t.attention {
                let cells: Vec<String> = row.data().iter().map(|v| format!("{v:.6}")).collect();
                writeln!(w, "{}", cells.join(" "))?;
            }
        }
        if let Some(w) = gates.as_mut() {
            let cells: Vec<String> = t.gates.iter().map(|g| format!("{g:.6}")).collect();
            writeln!(w, "{}", cells.join(" "))?;
        }
    }
    out.flush()?;
    for w in [att.as_mut(), gates.as_mut()].into_iter().flatten() {
        w.flush()?;
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    if !(a.bleu || a.perplexity || a.gate_stats) {
        return Err(Error::Config(
            "choose at least one of --bleu, --perplexity, --gate-stats".into(),
        ));
    }
    let tok = a.tok.tokenizer();
    if a.bleu {
        let plain = |p: &Path| -> Result<Vec<Vec<String>>> {
            Ok(read_lines(p)?
                .iter()
                .map(|l| l.split_whitespace().map(String::from).collect())
                .collect())
        };
        let hyps = plain(required(&a.hyp, "--hyp")?)?;
        if a.refs.is_empty() {
            return Err(Error::Config("--ref is required".into()));
        }
        let ref_sets = a
            .refs
            .iter()
            .map(|p| plain(p))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<Vec<Vec<String>>> = (0..hyps.len())
            .map(|i| ref_sets.iter().filter_map(|r| r.get(i).cloned()).collect())
            .collect();
        if ref_sets.iter().any(|r| r.len() != hyps.len()) {
            return Err(Error::Data(
                "hypothesis and reference files differ in length".into(),
            ));
        }
        println!("{}", bleu_multi(&hyps, &refs, a.smooth)?);
    }
    let ppl = if a.perplexity {
        let lm =
            checkpoint::lm_from_checkpoint::<f64>(&Checkpoint::load(required(&a.lm, "--lm")?)?)?;
        let vocab = load_vocab(a.vocab.as_deref(), "--vocab")?;
        let corpus: Vec<Vec<usize>> = read_tokenized(required(&a.input, "--input")?, tok)?
            .iter()
            .map(|s| vocab.encode_sentence(s))
            .collect();
        Some(perplexity(&lm, &corpus)?)
    } else {
        None
    };
    let gates = if a.gate_stats {
        let fm = checkpoint::fused_from_checkpoint::<f64>(&Checkpoint::load(required(
            &a.fused, "--fused",
        )?)?)?;
        let sv = load_vocab(a.src_vocab.as_deref(), "--src-vocab")?;
        let models = Models::new(&fm.nmt).with_fused(&fm);
        let cfg = BeamConfig::new(a.beam, FusionMode::Deep)?;
        let traces = read_tokenized(required(&a.source, "--source")?, tok)?
            .iter()
            .map(|s| Ok(translate(&sv.encode_sentence(s), &models, &cfg)?.gates))
            .collect::<Result<Vec<_>>>()?;
        Some(gate_stats(&traces)?)
    } else {
        None
    };
    match (ppl, gates) {
        (Some(p), Some(g)) => print!(
            "{}",
            analysis_report(&[AnalysisRow {
                label: a.label,
                perplexity: p,
                gates: g,
            }])
        ),
        (Some(p), None) => println!(
            "perplexity={:.6} tokens={} log_prob={:.6}",
            p.perplexity, p.tokens, p.log_prob
        ),
        (None, Some(g)) => println!("avg_g={:.6} std_g={:.6} count={}", g.mean, g.std, g.count),
        (None, None) => {}
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let models_args = ModelArgs {
        nmt: Some(a.nmt.clone()),
        lm: Some(a.lm.clone()),
        fused: None,
        src_vocab: a.src_vocab.clone(),
        tgt_vocab: a.tgt_vocab.clone(),
        tok: a.tok,
    };
    let loaded = Loaded::new(&models_args, Mode::Shallow)?;
    let tok = a.tok.tokenizer();
    let sources: Vec<Vec<usize>> = read_tokenized(&a.source, tok)?
        .iter()
        .map(|s| loaded.src.encode_sentence(s))
        .collect();
    let refs = read_tokenized(&a.reference, tok)?;
    let mut betas = if a.betas.is_empty() {
        beta_grid(a.points)
    } else {
        a.betas.clone()
    };
    if a.include_zero && !betas.contains(&0.0) {
        betas.insert(0, 0.0);
    }
    let sweep = sweep_beta(
        &sources,
        &refs,
        &loaded.models(),
        a.beam,
        &betas,
        &loaded.tgt,
    )?;
    println!("beta\tbleu");
    for r in &sweep.rows {
        println!("{}\t{:.4}", r.beta, r.bleu);
    }
    let best = sweep.best_row();
    println!("best_beta={} best_bleu={:.4}", best.beta, best.bleu);
    Ok(())
}
